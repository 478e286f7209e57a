//! Prunes a layer and dumps its mask as a PGM image plus a per-row histogram.

use lpaf::analysis::sparsity_pattern_export;
use lpaf::io::write_text;
use lpaf::nn::{generate_synthetic, train, MlpModel, SyntheticSpec, TrainConfig};
use lpaf::prune::{run_pruning, PruneMethod, PruneOptions, SparsitySchedule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lpaf::Result<()> {
    let spec = SyntheticSpec::LowrankTeacher {
        n: 2000,
        dim: 16,
        num_classes: 4,
        rank: 4,
        teacher_hidden: 32,
    };
    let data = generate_synthetic(&spec, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = MlpModel::new(&[16, 32, 4], data.task, &mut rng)?;
    train(
        &mut model,
        &data,
        &TrainConfig {
            learning_rate: 3e-3,
            total_steps: 600,
            ..TrainConfig::default()
        },
    )?;

    let steps = 400;
    let schedule = SparsitySchedule::new(0.15, 20, 80, steps)?;
    let cfg = TrainConfig {
        total_steps: steps,
        ..TrainConfig::default()
    };
    let out = run_pruning(
        &model,
        &data,
        &schedule,
        &cfg,
        &PruneOptions::new(PruneMethod::FirstOrder, vec![0]),
    )?;

    let pattern = sparsity_pattern_export(&out.model.layers[0])?;
    let path = std::env::temp_dir().join("lpaf-example-layer0.pgm");
    write_text(&path, &pattern.pgm)?;
    println!(
        "{} of {} rows keep weights; image at {}",
        pattern.nonzero_rows(),
        pattern.row_counts.len(),
        path.display()
    );
    print!("{}", pattern.histogram_csv());
    Ok(())
}
