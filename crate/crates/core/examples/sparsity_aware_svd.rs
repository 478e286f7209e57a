//! Row-weighted factorization of a pruned matrix versus plain truncated SVD.

use lpaf::factorize::{row_importance, sparsity_aware_factorize, vanilla_factorize};
use lpaf::linalg::Matrix;
use lpaf::prune::{magnitude_scores, prune_to, PruneMethod, PruneState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lpaf::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut w = Matrix::random_normal(64, 48, 1.0, &mut rng);
    // a handful of rows carry most of the weight mass
    for r in 0..8 {
        for v in w.row_mut(r) {
            *v *= 5.0;
        }
    }
    let mut state = PruneState::new(&w, PruneMethod::ZeroOrder);
    prune_to(&mut state, &mut w, 0.2)?;
    println!(
        "kept {} of {} weights, {} non-zero rows",
        state.kept(),
        w.len(),
        w.nonzero_rows()
    );

    let score = magnitude_scores(&w);
    let imp = row_importance(&score, 1e-6)?;
    println!("k,weighted_error_aware,weighted_error_plain,plain_error_aware,plain_error_plain");
    for k in [2, 4, 8, 16] {
        let aware = sparsity_aware_factorize(&w, &imp, k)?;
        let plain = vanilla_factorize(&w, k)?;
        println!(
            "{k},{:.3},{:.3},{:.3},{:.3}",
            imp.weighted_error(&w, &aware)?,
            imp.weighted_error(&w, &plain)?,
            w.sub(&aware.product())?.frobenius_norm(),
            w.sub(&plain.product())?.frobenius_norm(),
        );
    }
    Ok(())
}
