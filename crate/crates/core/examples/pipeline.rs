//! Full prune, factorize and fine-tune pipeline on a small config, writing artifacts to a temp dir.

use lpaf::io::{DatasetConfig, ExperimentConfig, ModelConfig};
use lpaf::nn::SyntheticSpec;
use lpaf::pipeline::lpaf_run;

fn small_config() -> ExperimentConfig {
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
    cfg
}

fn main() -> lpaf::Result<()> {
    let out = std::env::temp_dir().join("lpaf-example-pipeline");
    let run = lpaf_run(&small_config(), Some(&out))?;
    println!("stage,{},params,flops,average_rank", run.report.metric_name);
    for s in &run.report.stages {
        println!(
            "{},{:.4},{},{},{:.1}",
            s.stage, s.metric, s.stats.params, s.stats.flops_per_sample, s.stats.average_rank
        );
    }
    println!("artifacts in {}", out.display());
    Ok(())
}
