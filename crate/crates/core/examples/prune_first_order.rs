//! Gradual pruning with magnitude and first-order scores.

use lpaf::analysis::model_stats;
use lpaf::nn::{evaluate, generate_synthetic, train, MlpModel, SyntheticSpec, TrainConfig};
use lpaf::prune::{run_pruning, PruneMethod, PruneOptions, SparsitySchedule};
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
    let (train_set, test_set) = generate_synthetic(&spec, 2)?.split_at(2500)?;
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
    println!("dense accuracy {:.3}", evaluate(&dense, &test_set)?);

    let steps = 800;
    let schedule = SparsitySchedule::new(0.2, 50, 150, steps)?;
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        total_steps: steps,
        seed: 1,
        ..TrainConfig::default()
    };
    for method in [PruneMethod::ZeroOrder, PruneMethod::FirstOrder] {
        let opts = PruneOptions::new(method, vec![0, 1]);
        let out = run_pruning(&dense, &train_set, &schedule, &cfg, &opts)?;
        let stats = model_stats(&out.model)?;
        println!(
            "{:<12} accuracy {:.3}, kept params {}, zero rows {:.3}, average rank {:.1}",
            method.as_str(),
            evaluate(&out.model, &test_set)?,
            stats.kept_params,
            stats.zero_row_fraction,
            stats.average_rank
        );
    }
    Ok(())
}
