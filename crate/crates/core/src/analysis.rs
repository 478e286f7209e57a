//! Rank statistics, parameter and FLOPs accounting, sparsity-pattern export
//! and low-rank approximation curves.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{svd, truncate, Matrix, DEFAULT_RANK_TOL};
use crate::nn::{LayerKind, LinearLayer, MlpModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub name: String,
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
    /// Rank of the factor pair, for factorized layers.
    pub k: Option<usize>,
    /// Nonzero entries of the effective weight.
    pub nonzeros: usize,
    pub kept_fraction: f64,
    pub numerical_rank: usize,
    pub zero_rows: usize,
    /// Stored weight parameters: `n·m`, or `k(n+m)` when factorized.
    pub weight_params: usize,
    /// `weight_params` plus the bias.
    pub params: usize,
    /// Parameters that survive pruning, bias included.
    pub kept_params: usize,
    pub flops: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStats {
    pub layers: Vec<LayerStats>,
    pub params: usize,
    pub kept_params: usize,
    pub flops_per_sample: usize,
    /// Mean numerical rank over the factorizable (non-output) layers.
    pub average_rank: f64,
    /// Fraction of all-zero rows over the factorizable layers.
    pub zero_row_fraction: f64,
}

impl ModelStats {
    pub fn to_csv(&self) -> Result<String> {
        crate::io::csv_string(&self.layers)
    }
}

/// Indices of layers eligible for factorization: every layer but the output
/// layer, or the single layer of a one-layer model.
pub fn factorizable_layers(model: &MlpModel) -> Vec<usize> {
    let n = model.layers.len();
    if n <= 1 {
        (0..n).collect()
    } else {
        (0..n - 1).collect()
    }
}

/// `2·n·m + n + n` for a dense or sparse layer, `2·k(n+m) + n + n` when factorized.
pub fn layer_flops(layer: &LinearLayer) -> usize {
    let (n, m) = layer.shape();
    let mults = match &layer.kind {
        LayerKind::Factorized { pair, .. } => 2 * pair.k() * (n + m),
        _ => 2 * n * m,
    };
    mults + n + n
}

pub fn flops_per_sample(model: &MlpModel) -> usize {
    model.layers.iter().map(layer_flops).sum()
}

pub fn layer_stats(name: &str, layer: &LinearLayer, rank_tol: f64) -> Result<LayerStats> {
    let (n, m) = layer.shape();
    let w = layer.effective_weight();
    let nonzeros = w.count_nonzero();
    let numerical_rank = if nonzeros == 0 {
        0
    } else {
        crate::linalg::numerical_rank(&w, rank_tol)?
    };
    let (kind, k, weight_params, kept_weights) = match &layer.kind {
        LayerKind::Dense { .. } => ("dense", None, n * m, n * m),
        LayerKind::Sparse { state, .. } => ("sparse", None, n * m, state.kept()),
        LayerKind::Factorized { pair, .. } => ("factorized", Some(pair.k()), pair.param_count(), pair.param_count()),
    };
    Ok(LayerStats {
        name: name.to_string(),
        kind: kind.to_string(),
        rows: n,
        cols: m,
        k,
        nonzeros,
        kept_fraction: kept_weights as f64 / (n * m) as f64,
        numerical_rank,
        zero_rows: n - w.nonzero_rows(),
        weight_params,
        params: weight_params + n,
        kept_params: kept_weights + n,
        flops: layer_flops(layer),
    })
}

pub fn model_stats(model: &MlpModel) -> Result<ModelStats> {
    model_stats_with_tol(model, DEFAULT_RANK_TOL)
}

pub fn model_stats_with_tol(model: &MlpModel, rank_tol: f64) -> Result<ModelStats> {
    let layers = model
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| layer_stats(&format!("layer{i}"), l, rank_tol))
        .collect::<Result<Vec<_>>>()?;
    let core = factorizable_layers(model);
    let average_rank = core.iter().map(|&i| layers[i].numerical_rank as f64).sum::<f64>() / core.len().max(1) as f64;
    let (zero, rows) = core
        .iter()
        .fold((0, 0), |(z, r), &i| (z + layers[i].zero_rows, r + layers[i].rows));
    Ok(ModelStats {
        params: layers.iter().map(|l| l.params).sum(),
        kept_params: layers.iter().map(|l| l.kept_params).sum(),
        flops_per_sample: layers.iter().map(|l| l.flops).sum(),
        average_rank,
        zero_row_fraction: if rows == 0 { 0.0 } else { zero as f64 / rows as f64 },
        layers,
    })
}

/// A sparse layer's mask as a P2 graymap (kept = white) and per-row kept counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityPattern {
    pub pgm: String,
    pub row_counts: Vec<usize>,
}

impl SparsityPattern {
    pub fn nonzero_rows(&self) -> usize {
        self.row_counts.iter().filter(|&&c| c > 0).count()
    }

    /// `row,nonzeros` CSV.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("row,nonzeros\n");
        for (r, c) in self.row_counts.iter().enumerate() {
            let _ = writeln!(out, "{r},{c}");
        }
        out
    }
}

pub fn sparsity_pattern_export(layer: &LinearLayer) -> Result<SparsityPattern> {
    let mask = match &layer.kind {
        LayerKind::Sparse { state, .. } => &state.mask,
        _ => return Err(Error::invalid("sparsity patterns are only defined for sparse layers")),
    };
    Ok(pattern_of_mask(mask))
}

fn pattern_of_mask(mask: &Matrix) -> SparsityPattern {
    let mut pgm = format!("P2\n{} {}\n1\n", mask.cols(), mask.rows());
    let mut row_counts = Vec::with_capacity(mask.rows());
    for r in 0..mask.rows() {
        let row = mask.row(r);
        let line: Vec<&str> = row.iter().map(|&v| if v != 0.0 { "1" } else { "0" }).collect();
        pgm.push_str(&line.join(" "));
        pgm.push('\n');
        row_counts.push(row.iter().filter(|&&v| v != 0.0).count());
    }
    SparsityPattern { pgm, row_counts }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub matrix: String,
    pub k: usize,
    pub frobenius_error: f64,
    pub relative_error: f64,
    pub cumulative_fraction: f64,
}

/// Truncation error and cumulative singular-value fraction of each matrix at every `k`.
pub fn approximation_curves(ws: &[(String, Matrix)], k_grid: &[usize]) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::new();
    for (name, w) in ws {
        let r = w.rows().min(w.cols());
        if let Some(&bad) = k_grid.iter().find(|&&k| k == 0 || k > r) {
            return Err(Error::invalid(format!("k = {bad} outside 1..={r} for {name}")));
        }
        let s = svd(w)?;
        let norm = w.frobenius_norm();
        let total: f64 = s.sigma.iter().sum();
        for &k in k_grid {
            let err = crate::linalg::frobenius_error(w, &truncate(&s, k)?)?;
            let head: f64 = s.sigma[..k].iter().sum();
            out.push(CurvePoint {
                matrix: name.clone(),
                k,
                frobenius_error: err,
                relative_error: if norm > 0.0 { err / norm } else { 0.0 },
                cumulative_fraction: if total > 0.0 { head / total } else { 1.0 },
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorize::{factorize_model, Weighting};
    use crate::nn::Task;
    use crate::prune::{sparsify, PruneMethod, PruneState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(weight: Matrix) -> MlpModel {
        let n = weight.rows();
        MlpModel::from_layers(
            vec![LinearLayer::dense(weight, vec![0.0; n]).unwrap()],
            Task::Classification { num_classes: n },
        )
        .unwrap()
    }

    #[test]
    fn flops_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = single(Matrix::random_normal(4, 4, 1.0, &mut rng));
        assert_eq!(flops_per_sample(&m), 40);
        let f = factorize_model(&m, &[(0, 1)], Weighting::None, 1e-6).unwrap();
        assert_eq!(flops_per_sample(&f), 24);
        let stats = model_stats(&f).unwrap();
        assert_eq!(stats.layers[0].params, 8 + 4);
        assert!(stats.layers[0].numerical_rank <= 1);
    }

    #[test]
    fn random_layers_are_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = MlpModel::new(&[32, 256, 256, 10], Task::Classification { num_classes: 10 }, &mut rng).unwrap();
        let stats = model_stats(&m).unwrap();
        assert_eq!(stats.layers[1].numerical_rank, 256);
        assert_eq!(stats.layers[0].numerical_rank, 32);
        assert_eq!(stats.average_rank, 144.0);
        assert_eq!(stats.params, 32 * 256 + 256 + 256 * 256 + 256 + 256 * 10 + 10);
        assert_eq!(stats.zero_row_fraction, 0.0);
    }

    #[test]
    fn pruned_rows_bound_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = MlpModel::new(&[12, 20, 3], Task::Classification { num_classes: 3 }, &mut rng).unwrap();
        sparsify(&mut m, &[0], PruneMethod::ZeroOrder).unwrap();
        if let LayerKind::Sparse { weight, state } = &mut m.layers[0].kind {
            for r in 3..20 {
                state.mask.row_mut(r).fill(0.0);
                weight.row_mut(r).fill(0.0);
            }
        }
        let stats = model_stats(&m).unwrap();
        assert!(stats.layers[0].numerical_rank <= 3);
        assert_eq!(stats.layers[0].zero_rows, 17);
        assert_eq!(stats.layers[0].kept_params, 3 * 12 + 20);
    }

    #[test]
    fn pattern_export() {
        let w = Matrix::filled(3, 5, 0.5);
        let layer = LinearLayer {
            kind: LayerKind::Sparse {
                state: PruneState::new(&w, PruneMethod::ZeroOrder),
                weight: w,
            },
            bias: vec![0.0; 3],
        };
        let p = sparsity_pattern_export(&layer).unwrap();
        assert!(p.pgm.starts_with("P2\n5 3\n1\n"));
        assert_eq!(p.pgm.lines().skip(3).collect::<Vec<_>>(), vec!["1 1 1 1 1"; 3]);
        assert!(sparsity_pattern_export(&LinearLayer::dense(Matrix::zeros(2, 2), vec![0.0; 2]).unwrap()).is_err());

        let mut mask = Matrix::zeros(30, 4);
        (0..10).for_each(|r| mask.row_mut(r).fill(1.0));
        let p = pattern_of_mask(&mask);
        assert_eq!(p.nonzero_rows(), 10);
        assert!(p.histogram_csv().starts_with("row,nonzeros\n0,4\n"));
    }

    #[test]
    fn curve_examples() {
        let c = approximation_curves(&[("eye".into(), Matrix::identity(4))], &[2]).unwrap();
        assert!((c[0].frobenius_error - 2f64.sqrt()).abs() < 1e-12);
        assert!((c[0].cumulative_fraction - 0.5).abs() < 1e-12);

        let u = Matrix::from_rows(&[[1.0], [2.0], [-1.0]]);
        let v = Matrix::from_rows(&[[3.0, 0.5, 1.0, -2.0]]);
        let rank1 = u.matmul(&v).unwrap();
        for p in approximation_curves(&[("r1".into(), rank1)], &[1, 2, 3]).unwrap() {
            assert!(p.frobenius_error < 1e-10);
            assert!((p.cumulative_fraction - 1.0).abs() < 1e-12);
        }
        assert!(approximation_curves(&[("eye".into(), Matrix::identity(4))], &[5]).is_err());
    }
}
