//! Vanilla and row-weighted ("sparsity-aware") truncated SVD of pruned weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{svd, truncate, FactorPair, Matrix};
use crate::nn::{LayerKind, MlpModel};

pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-6;
/// Added after shifting scores by their minimum so every row sum is positive.
const SHIFT_DELTA: f64 = 1e-12;

/// Which per-row weights drive the factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Row sums of the pruning scores.
    Score,
    /// Row sums of the mask, i.e. kept entries per row.
    Mask,
    /// Plain truncated SVD.
    None,
}

impl Weighting {
    pub fn as_str(&self) -> &'static str {
        match self {
            Weighting::Score => "score",
            Weighting::Mask => "mask",
            Weighting::None => "none",
        }
    }
}

/// Normalised per-row importance, floored away from zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RowImportance {
    pub s_hat: Vec<f64>,
    pub epsilon_floor: f64,
}

impl RowImportance {
    pub fn uniform(n: usize) -> Self {
        Self {
            s_hat: vec![1.0 / n as f64; n],
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
        }
    }

    /// `diag(s_hat)` as a dense matrix.
    pub fn i_hat(&self) -> Matrix {
        Matrix::diag(&self.s_hat)
    }

    /// `‖diag(s_hat) (W − A B)‖_F`.
    pub fn weighted_error(&self, w: &Matrix, f: &FactorPair) -> Result<f64> {
        if f.shape() != w.shape() {
            return Err(Error::Shape {
                op: "weighted_error",
                left: w.shape(),
                right: f.shape(),
            });
        }
        Ok(w.sub(&f.product())?.scale_rows(&self.s_hat)?.frobenius_norm())
    }
}

/// Row importances from a score matrix: shift by `min(S)`, sum each row,
/// normalise by the total, then raise entries below `epsilon_floor` to it.
pub fn row_importance(score: &Matrix, epsilon_floor: f64) -> Result<RowImportance> {
    if score.cols() == 0 || score.rows() == 0 {
        return Err(Error::invalid("row importance of an empty score matrix"));
    }
    if !(epsilon_floor > 0.0) {
        return Err(Error::invalid("epsilon_floor must be positive"));
    }
    score.check_finite()?;
    let min = score.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = (0..score.rows())
        .map(|r| score.row(r).iter().map(|s| s - min + SHIFT_DELTA).sum())
        .collect();
    let total: f64 = raw.iter().sum();
    let s_hat = raw.iter().map(|r| (r / total).max(epsilon_floor)).collect();
    Ok(RowImportance { s_hat, epsilon_floor })
}

/// Rank-`k` factorization minimising `‖Î(W − AB)‖_F`:
/// `Î W = Û Σ̂ V̂ᵀ`, `A = Î⁻¹ Û_k Σ̂_k`, `B = V̂_kᵀ`.
pub fn sparsity_aware_factorize(weight: &Matrix, imp: &RowImportance, k: usize) -> Result<FactorPair> {
    if imp.s_hat.len() != weight.rows() {
        return Err(Error::Shape {
            op: "sparsity_aware_factorize",
            left: weight.shape(),
            right: (imp.s_hat.len(), imp.s_hat.len()),
        });
    }
    let r = weight.rows().min(weight.cols());
    if k == 0 || k > r {
        return Err(Error::invalid(format!("rank {k} outside 1..={r}")));
    }
    let weighted = weight.scale_rows(&imp.s_hat)?;
    let pair = truncate(&svd(&weighted)?, k)?;
    let inv: Vec<f64> = imp.s_hat.iter().map(|s| 1.0 / s).collect();
    let a = pair.a().scale_rows(&inv)?;
    FactorPair::new(a, pair.b().clone())
}

/// Vanilla truncated SVD, `A = U_k Σ_k`, `B = V_kᵀ`.
pub fn vanilla_factorize(weight: &Matrix, k: usize) -> Result<FactorPair> {
    truncate(&svd(weight)?, k)
}

/// Rank that gives roughly `fraction` of the `n·m` parameters: `round(f·n·m/(n+m))`, clamped to `1..=min(n,m)`.
pub fn rank_for_fraction(n: usize, m: usize, fraction: f64) -> usize {
    let k = (fraction * (n * m) as f64 / (n + m) as f64).round() as usize;
    k.clamp(1, n.min(m))
}

/// Uniform rank whose factors hold about `fraction` of the combined `n·m`
/// weights of `shapes`: `round(f·Σnm / Σ(n+m))`, at least 1.
pub fn rank_for_budget(shapes: &[(usize, usize)], fraction: f64) -> usize {
    let nm: usize = shapes.iter().map(|&(n, m)| n * m).sum();
    let sum: usize = shapes.iter().map(|&(n, m)| n + m).sum();
    if sum == 0 {
        return 1;
    }
    ((fraction * nm as f64 / sum as f64).round() as usize).max(1)
}

/// Replaces each listed layer `(index, k)` with its rank-`k` factorization.
///
/// The pre-factorization weight becomes the shadow matrix; its mask becomes
/// the shadow mask (all ones for dense layers). Biases and unlisted layers are
/// carried over untouched.
pub fn factorize_model(
    model: &MlpModel,
    plan: &[(usize, usize)],
    weighting: Weighting,
    epsilon_floor: f64,
) -> Result<MlpModel> {
    let mut out = model.clone();
    for &(l, k) in plan {
        let layer = out
            .layers
            .get_mut(l)
            .ok_or_else(|| Error::invalid(format!("layer {l} does not exist")))?;
        let (weight, mask, score) = match &layer.kind {
            LayerKind::Dense { weight } => (weight, None, None),
            LayerKind::Sparse { weight, state } => (weight, Some(&state.mask), Some(&state.score)),
            LayerKind::Factorized { .. } => return Err(Error::invalid(format!("layer {l} is already factorized"))),
        };
        let pair = match weighting {
            Weighting::None => vanilla_factorize(weight, k)?,
            Weighting::Score => {
                let s = score.ok_or_else(|| Error::invalid(format!("layer {l} has no pruning scores")))?;
                sparsity_aware_factorize(weight, &row_importance(s, epsilon_floor)?, k)?
            }
            Weighting::Mask => {
                let m = mask.ok_or_else(|| Error::invalid(format!("layer {l} has no pruning mask")))?;
                sparsity_aware_factorize(weight, &row_importance(m, epsilon_floor)?, k)?
            }
        };
        let shadow_mask = mask
            .cloned()
            .unwrap_or_else(|| Matrix::filled(weight.rows(), weight.cols(), 1.0));
        let shadow = weight.clone();
        layer.kind = LayerKind::Factorized {
            pair,
            shadow,
            shadow_mask,
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn row_importance_examples() {
        let s = Matrix::from_rows(&[[2.0, 0.0], [0.5, 0.5], [1.0, 0.0]]);
        let imp = row_importance(&s, DEFAULT_EPSILON_FLOOR).unwrap();
        for (got, want) in imp.s_hat.iter().zip([0.5, 0.25, 0.25]) {
            assert!((got - want).abs() < 1e-11);
        }

        let imp = row_importance(&Matrix::filled(4, 3, -7.0), DEFAULT_EPSILON_FLOOR).unwrap();
        assert!(imp.s_hat.iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let n = 5;
        let mut s = Matrix::filled(n, 2, 0.5);
        s[(0, 0)] = 9.5;
        s[(1, 0)] = 0.0;
        s[(1, 1)] = 1.0;
        // after the shift: row 0 sums to 10, every other row to 1
        let imp = row_importance(&s, DEFAULT_EPSILON_FLOOR).unwrap();
        assert!((imp.s_hat[0] - 10.0 / (10.0 + (n - 1) as f64)).abs() < 1e-10);
    }

    #[test]
    fn importance_is_floored() {
        let mut s = Matrix::zeros(3, 2);
        s[(0, 0)] = 1.0;
        let imp = row_importance(&s, 1e-3).unwrap();
        assert_eq!(imp.s_hat[1], 1e-3);
        assert_eq!(imp.s_hat[2], 1e-3);
    }

    #[test]
    fn uniform_importance_matches_vanilla() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = Matrix::random_normal(9, 7, 1.0, &mut rng);
        let a = sparsity_aware_factorize(&w, &RowImportance::uniform(9), 3).unwrap();
        let b = vanilla_factorize(&w, 3).unwrap();
        assert!(a.product().sub(&b.product()).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn floored_zero_row_is_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut w = Matrix::random_normal(6, 5, 1.0, &mut rng);
        w.row_mut(2).fill(0.0);
        let mut mask = Matrix::filled(6, 5, 1.0);
        mask.row_mut(2).fill(0.0);
        let imp = row_importance(&mask, DEFAULT_EPSILON_FLOOR).unwrap();
        assert_eq!(imp.s_hat[2], DEFAULT_EPSILON_FLOOR);
        let f = sparsity_aware_factorize(&w, &imp, 5).unwrap();
        let p = f.product();
        for r in (0..6).filter(|&r| r != 2) {
            for c in 0..5 {
                assert!((p[(r, c)] - w[(r, c)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rank_range_checked() {
        let w = Matrix::identity(3);
        assert!(sparsity_aware_factorize(&w, &RowImportance::uniform(3), 0).is_err());
        assert!(sparsity_aware_factorize(&w, &RowImportance::uniform(3), 4).is_err());
        assert!(sparsity_aware_factorize(&w, &RowImportance::uniform(2), 1).is_err());
    }

    #[test]
    fn fraction_to_rank() {
        assert_eq!(rank_for_fraction(256, 256, 0.25), 32);
        assert_eq!(rank_for_fraction(256, 64, 0.25), 13);
        assert_eq!(rank_for_fraction(256, 256, 0.10), 13);
        assert_eq!(rank_for_fraction(4, 4, 0.01), 1);
        assert_eq!(rank_for_fraction(4, 4, 5.0), 4);
        assert_eq!(rank_for_budget(&[(256, 64), (256, 256)], 0.25), 25);
        assert_eq!(rank_for_budget(&[(256, 64), (256, 256)], 0.10), 10);
        assert_eq!(rank_for_budget(&[(256, 256)], 0.25), 32);
    }
}
