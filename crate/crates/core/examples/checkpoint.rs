//! Saves a factorized model, reloads it and prints the manifest.

use lpaf::factorize::{factorize_model, Weighting};
use lpaf::io::{load_checkpoint, save_checkpoint};
use lpaf::nn::{MlpModel, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lpaf::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = MlpModel::new(&[8, 16, 3], Task::Classification { num_classes: 3 }, &mut rng)?;
    let model = factorize_model(&model, &[(0, 4)], Weighting::None, 1e-6)?;

    let dir = tempfile_dir();
    let manifest = save_checkpoint(&model, &dir)?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);
    let back = load_checkpoint(&dir)?;
    println!("round trip identical: {}", back == model);
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    std::env::temp_dir().join(format!("lpaf-example-checkpoint-{}", std::process::id()))
}
