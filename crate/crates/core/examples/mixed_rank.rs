//! Mixed-rank fine-tuning of a factorized model, with the gate probability decaying to zero.

use lpaf::factorize::{factorize_model, rank_for_fraction, Weighting};
use lpaf::mixedrank::{mixed_rank_finetune, MixedRankConfig};
use lpaf::nn::{evaluate, generate_synthetic, train, MlpModel, SyntheticSpec, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lpaf::Result<()> {
    let spec = SyntheticSpec::LowrankTeacher {
        n: 3000,
        dim: 16,
        num_classes: 4,
        rank: 4,
        teacher_hidden: 32,
    };
    let (train_set, test_set) = generate_synthetic(&spec, 5)?.split_at(2500)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut dense = MlpModel::new(&[16, 64, 64, 4], train_set.task, &mut rng)?;
    train(
        &mut dense,
        &train_set,
        &TrainConfig {
            learning_rate: 3e-3,
            total_steps: 1500,
            ..TrainConfig::default()
        },
    )?;

    let plan: Vec<_> = [(0, 16, 64), (1, 64, 64)]
        .iter()
        .map(|&(l, m, n)| (l, rank_for_fraction(n, m, 0.25)))
        .collect();
    let factorized = factorize_model(&dense, &plan, Weighting::None, 1e-6)?;
    println!(
        "dense {:.3}, factorized {:.3}",
        evaluate(&dense, &test_set)?,
        evaluate(&factorized, &test_set)?
    );

    let train_cfg = TrainConfig {
        learning_rate: 1e-3,
        total_steps: 600,
        seed: 9,
        ..TrainConfig::default()
    };
    for (p_init, lambda) in [(0.0, 0.0), (0.5, 0.0), (0.5, 1.0)] {
        let cfg = MixedRankConfig {
            p_init,
            consistency_weight: lambda,
            seed: 4,
            ..MixedRankConfig::default()
        };
        let (tuned, log) = mixed_rank_finetune(&factorized, &train_set, &cfg, &train_cfg)?;
        let early = &log[10];
        println!(
            "p_init {p_init}, lambda {lambda}: accuracy {:.3} (step {} p {:.3} consistency {:.4})",
            evaluate(&tuned, &test_set)?,
            early.step,
            early.p,
            early.consistency
        );
    }
    Ok(())
}
