//! Thin SVD of a random matrix and the error of its rank-k truncations.

use lpaf::linalg::{cumulative_singular_fraction, frobenius_error, svd, truncate, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lpaf::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // rank 8 signal plus a little noise
    let left = Matrix::random_normal(48, 8, 1.0, &mut rng);
    let right = Matrix::random_normal(8, 32, 1.0, &mut rng);
    let noise = Matrix::random_normal(48, 32, 0.05, &mut rng);
    let w = left.matmul(&right)?.add(&noise)?;

    let s = svd(&w)?;
    println!("leading singular values: {:.3?}", &s.sigma[..10]);
    println!(
        "reconstruction error: {:.2e}",
        s.reconstruct().sub(&w)?.frobenius_norm()
    );

    println!("k,error,cumulative_fraction");
    for k in [1, 4, 8, 12, 32] {
        let pair = truncate(&s, k)?;
        println!(
            "{k},{:.4},{:.4}",
            frobenius_error(&w, &pair)?,
            cumulative_singular_fraction(&w, k)?
        );
    }
    Ok(())
}
