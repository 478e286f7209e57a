//! Accuracy and rank of SVD fine-tuning against unstructured pruning at a few budgets.

use lpaf::io::{DatasetConfig, ExperimentConfig, ModelConfig};
use lpaf::nn::SyntheticSpec;
use lpaf::pipeline::{study_seed, summarize_study, SeedContext};

fn main() -> lpaf::Result<()> {
    let mut cfg = ExperimentConfig {
        dataset: DatasetConfig::Synthetic {
            spec: SyntheticSpec::LowrankTeacher {
                n: 3000,
                dim: 16,
                num_classes: 4,
                rank: 4,
                teacher_hidden: 32,
            },
            seed: 0,
            test_n: 1000,
        },
        model: ModelConfig { hidden: vec![64, 64] },
        ..ExperimentConfig::default()
    };
    cfg.train.total_steps = 1500;
    cfg.prune.train.total_steps = 600;
    cfg.prune.warmup_steps = 50;
    cfg.prune.cooldown_steps = 100;
    cfg.finetune.train.total_steps = 300;

    let ctx = SeedContext::prepare(&cfg, 0)?;
    let rows = study_seed(&ctx, &[0.5, 0.25])?;
    println!("budget,arm,metric,average_rank,zero_row_fraction");
    for s in summarize_study(&rows) {
        println!(
            "{},{:?},{:.4},{:.1},{:.3}",
            s.budget, s.arm, s.mean_metric, s.mean_average_rank, s.mean_zero_row_fraction
        );
    }
    Ok(())
}
