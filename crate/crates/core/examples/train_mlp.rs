//! Trains a small MLP on two synthetic tasks.

use lpaf::nn::{evaluate, generate_synthetic, train, MlpModel, SyntheticSpec, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lpaf::Result<()> {
    let specs = [
        SyntheticSpec::Blobs {
            n: 1200,
            dim: 10,
            num_classes: 4,
            separation: 4.0,
            noise: 1.0,
        },
        SyntheticSpec::Spirals {
            n: 1200,
            dim: 4,
            num_classes: 3,
            noise: 0.05,
        },
    ];
    for spec in specs {
        let data = generate_synthetic(&spec, 1)?;
        let (train_set, test_set) = data.split_at(1000)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = MlpModel::new(&[spec.dim(), 64, 64, spec.num_classes()], data.task, &mut rng)?;
        let cfg = TrainConfig {
            learning_rate: 5e-3,
            total_steps: 1500,
            ..TrainConfig::default()
        };
        let losses = train(&mut model, &train_set, &cfg)?;
        println!(
            "{spec:?}\n  final loss {:.4}, test accuracy {:.3}",
            losses.last().unwrap(),
            evaluate(&model, &test_set)?
        );
    }
    Ok(())
}
