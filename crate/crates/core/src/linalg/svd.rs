//! One-sided Jacobi SVD and the truncated factorizations built on it.

use super::matrix::{axpy, dot, Matrix};
use crate::error::{Error, Result};

/// Default relative tolerance for [`numerical_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-6;

const MAX_SWEEPS: usize = 60;
/// A column pair is considered orthogonal once `|<a,b>| <= ORTH_TOL * |a| |b|`.
const ORTH_TOL: f64 = 1e-14;

/// Full thin SVD `W = U diag(sigma) Vᵀ` with `r = min(n, m)` triples.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    /// Number of retained triples.
    pub fn r(&self) -> usize {
        self.sigma.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let us = self.u.scale_cols(&self.sigma);
        us.matmul_t(&self.v).expect("svd factors are conformant")
    }
}

/// Low-rank pair with `a · b ≈ W`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    a: Matrix,
    b: Matrix,
}

impl FactorPair {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if a.cols() != b.rows() || a.cols() == 0 {
            return Err(a.shape_err("factor pair", &b));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn a_mut(&mut self) -> &mut Matrix {
        &mut self.a
    }

    pub fn b_mut(&mut self) -> &mut Matrix {
        &mut self.b
    }

    /// Element access to both factors; shapes stay fixed.
    pub fn parts_mut(&mut self) -> (&mut Matrix, &mut Matrix) {
        (&mut self.a, &mut self.b)
    }

    pub fn k(&self) -> usize {
        self.a.cols()
    }

    /// Shape `(n, m)` of the approximated matrix.
    pub fn shape(&self) -> (usize, usize) {
        (self.a.rows(), self.b.cols())
    }

    /// `k (n + m)`
    pub fn param_count(&self) -> usize {
        let (n, m) = self.shape();
        self.k() * (n + m)
    }

    pub fn product(&self) -> Matrix {
        self.a.matmul(&self.b).expect("pair dimensions checked at construction")
    }
}

impl Matrix {
    pub(crate) fn scale_cols(&self, s: &[f64]) -> Matrix {
        Matrix::from_fn(self.rows(), s.len(), |r, c| self[(r, c)] * s[c])
    }
}

/// Computes the thin SVD with one-sided Jacobi rotations.
///
/// Singular values come back in descending order. The first entry of each
/// left singular vector whose magnitude exceeds `1e-12` is made non-negative,
/// so the output is deterministic for a given input.
pub fn svd(w: &Matrix) -> Result<SvdResult> {
    if w.is_empty() {
        return Err(Error::invalid("svd of an empty matrix"));
    }
    w.check_finite()?;
    let (mut res, transposed) = if w.rows() >= w.cols() {
        (jacobi_tall(w)?, false)
    } else {
        (jacobi_tall(&w.transpose())?, true)
    };
    if transposed {
        std::mem::swap(&mut res.u, &mut res.v);
    }
    fix_signs(&mut res);
    Ok(res)
}

/// Jacobi on the columns of a matrix with `rows >= cols`.
fn jacobi_tall(w: &Matrix) -> Result<SvdResult> {
    let (n, m) = w.shape();
    let mut cols: Vec<Vec<f64>> = (0..m).map(|c| w.col(c)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..m)
        .map(|c| {
            let mut e = vec![0.0; m];
            e[c] = 1.0;
            e
        })
        .collect();

    // columns at round-off level are treated as exact zeros
    let zero_tol = w.frobenius_norm() * f64::EPSILON * n as f64;
    let zero_tol_sq = zero_tol * zero_tol;

    let mut converged = m < 2;
    let mut residual = 0.0f64;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        residual = 0.0;
        for p in 0..m {
            for q in p + 1..m {
                let (lo, hi) = cols.split_at_mut(q);
                let (cp, cq) = (&mut lo[p], &mut hi[0]);
                let alpha = dot(cp, cp);
                let beta = dot(cq, cq);
                let gamma = dot(cp, cq);
                if gamma == 0.0 || alpha <= zero_tol_sq || beta <= zero_tol_sq {
                    continue;
                }
                let scale = (alpha * beta).sqrt();
                if scale == 0.0 {
                    continue;
                }
                let rel = gamma.abs() / scale;
                residual = residual.max(rel);
                if rel <= ORTH_TOL {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(cp, cq, c, s);
                let (vlo, vhi) = vcols.split_at_mut(q);
                rotate(&mut vlo[p], &mut vhi[0], c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            sweeps: MAX_SWEEPS,
            residual,
        });
    }

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let mut u = Matrix::zeros(n, m);
    let mut v = Matrix::zeros(m, m);
    let mut sigma = Vec::with_capacity(m);
    let mut needs_completion = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        if s > zero_tol && s > 0.0 {
            for i in 0..n {
                u[(i, dst)] = cols[src][i] / s;
            }
            sigma.push(s);
        } else {
            needs_completion.push(dst);
            sigma.push(0.0);
        }
        for i in 0..m {
            v[(i, dst)] = vcols[src][i];
        }
    }
    complete_basis(&mut u, &needs_completion);
    Ok(SvdResult { u, sigma, v })
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
        let a = *xi;
        let b = *yi;
        *xi = c * a - s * b;
        *yi = s * a + c * b;
    }
}

/// Fills the listed columns of `u` with unit vectors orthogonal to every other column.
///
/// Each new column starts from the coordinate vector `e_i` with the largest
/// residual `1 − ‖U[i, filled]‖²`, which is always at least `1/n`.
fn complete_basis(u: &mut Matrix, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let (n, r) = u.shape();
    let mut filled: Vec<usize> = (0..r).filter(|c| !missing.contains(c)).collect();
    let mut row_mass: Vec<f64> = (0..n)
        .map(|i| filled.iter().map(|&c| u[(i, c)] * u[(i, c)]).sum())
        .collect();
    for &dst in missing {
        let best = (0..n)
            .min_by(|&a, &b| row_mass[a].total_cmp(&row_mass[b]).then(a.cmp(&b)))
            .expect("non-empty");
        let mut e = vec![0.0; n];
        e[best] = 1.0;
        // two passes of Gram-Schmidt
        for _ in 0..2 {
            for &c in &filled {
                let col = u.col(c);
                let proj = dot(&col, &e);
                axpy(-proj, &col, &mut e);
            }
        }
        let norm = dot(&e, &e).sqrt();
        for i in 0..n {
            let x = e[i] / norm;
            u[(i, dst)] = x;
            row_mass[i] += x * x;
        }
        filled.push(dst);
    }
}

fn fix_signs(res: &mut SvdResult) {
    let (n, r) = res.u.shape();
    for c in 0..r {
        let lead = (0..n).map(|i| res.u[(i, c)]).find(|x| x.abs() > 1e-12);
        if matches!(lead, Some(x) if x < 0.0) {
            for i in 0..n {
                res.u[(i, c)] = -res.u[(i, c)];
            }
            for i in 0..res.v.rows() {
                res.v[(i, c)] = -res.v[(i, c)];
            }
        }
    }
}

/// `A = U[:, :k] Σ[:k]`, `B = V[:, :k]ᵀ`.
pub fn truncate(s: &SvdResult, k: usize) -> Result<FactorPair> {
    if k == 0 || k > s.r() {
        return Err(Error::invalid(format!("rank {k} outside 1..={}", s.r())));
    }
    let a = s.u.leading_cols(k).scale_cols(&s.sigma[..k]);
    let b = s.v.leading_cols(k).transpose();
    FactorPair::new(a, b)
}

/// Count of singular values strictly above `rel_tol * sigma_1`.
pub fn numerical_rank(w: &Matrix, rel_tol: f64) -> Result<usize> {
    if !(rel_tol > 0.0) {
        return Err(Error::invalid(format!(
            "rank tolerance must be positive, got {rel_tol}"
        )));
    }
    let s = svd(w)?;
    Ok(rank_of_sigma(&s.sigma, rel_tol))
}

pub(crate) fn rank_of_sigma(sigma: &[f64], rel_tol: f64) -> usize {
    let top = sigma.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return 0;
    }
    sigma.iter().filter(|&&s| s > rel_tol * top).count()
}

/// `‖W − A B‖_F`.
pub fn frobenius_error(w: &Matrix, f: &FactorPair) -> Result<f64> {
    if w.shape() != f.shape() {
        return Err(Error::Shape {
            op: "frobenius_error",
            left: w.shape(),
            right: f.shape(),
        });
    }
    Ok(w.sub(&f.product())?.frobenius_norm())
}

/// Share of the singular-value mass carried by the top `k` values.
pub fn cumulative_singular_fraction(w: &Matrix, k: usize) -> Result<f64> {
    let r = w.rows().min(w.cols());
    if k == 0 || k > r {
        return Err(Error::invalid(format!("rank {k} outside 1..={r}")));
    }
    let s = svd(w)?;
    Ok(fraction_of_sigma(&s.sigma, k))
}

pub(crate) fn fraction_of_sigma(sigma: &[f64], k: usize) -> f64 {
    let total: f64 = sigma.iter().sum();
    if total == 0.0 {
        return 1.0;
    }
    let head: f64 = sigma[..k].iter().sum();
    (head / total).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn orth_dev(q: &Matrix) -> f64 {
        let g = q.t_matmul(q).unwrap();
        g.sub(&Matrix::identity(g.rows())).unwrap().max_abs()
    }

    /// Cyclic two-sided Jacobi eigensolver for a symmetric matrix; test oracle only.
    fn sym_eigenvalues(a: &Matrix) -> Vec<f64> {
        let n = a.rows();
        let mut a = a.clone();
        for _ in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in 0..n {
                    if p != q {
                        off += a[(p, q)] * a[(p, q)];
                    }
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        ev
    }

    #[test]
    fn diagonal_input() {
        let w = Matrix::diag(&[3.0, 2.0, 1.0]);
        let s = svd(&w).unwrap();
        assert_eq!(s.sigma, vec![3.0, 2.0, 1.0]);
        for i in 0..3 {
            assert!((s.u[(i, i)].abs() - 1.0).abs() < 1e-15);
            assert!((s.v[(i, i)].abs() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn square_rank_deficient_keeps_orthonormal_u() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (n, r) in [(6, 5), (40, 37), (64, 1)] {
            let a = Matrix::random_normal(n, r, 1.0, &mut rng);
            let b = Matrix::random_normal(r, n, 1.0, &mut rng);
            let w = a.matmul(&b).unwrap();
            let s = svd(&w).unwrap();
            assert!(orth_dev(&s.u) < 1e-10, "{n}x{n} rank {r}");
            assert!(s.reconstruct().sub(&w).unwrap().frobenius_norm() <= 1e-8 * w.frobenius_norm());
        }
    }

    #[test]
    fn zero_matrix() {
        let s = svd(&Matrix::zeros(4, 3)).unwrap();
        assert_eq!(s.sigma, vec![0.0; 3]);
        assert!(orth_dev(&s.u) < 1e-12);
        assert!(orth_dev(&s.v) < 1e-12);
    }

    #[test]
    fn sigma_matches_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = Matrix::random_normal(8, 5, 1.0, &mut rng);
        let ev = sym_eigenvalues(&w.t_matmul(&w).unwrap());
        let s = svd(&w).unwrap();
        for (sv, e) in s.sigma.iter().zip(&ev) {
            assert!((sv - e.max(0.0).sqrt()).abs() < 1e-8, "{sv} vs {}", e.sqrt());
        }
    }

    #[test]
    fn wide_input_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Matrix::random_normal(5, 9, 1.0, &mut rng);
        let s = svd(&w).unwrap();
        assert_eq!(s.u.shape(), (5, 5));
        assert_eq!(s.v.shape(), (9, 5));
        assert!(orth_dev(&s.u) < 1e-12);
        assert!(orth_dev(&s.v) < 1e-12);
        let err = w.sub(&s.reconstruct()).unwrap().frobenius_norm() / w.frobenius_norm();
        assert!(err < 1e-12);
    }

    #[test]
    fn sign_convention() {
        let w = Matrix::diag(&[-2.0, 1.0]);
        let s = svd(&w).unwrap();
        assert!(s.u[(0, 0)] > 0.0);
        assert!((s.v[(0, 0)] + 1.0).abs() < 1e-15);
        let again = svd(&w).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn rejects_non_finite() {
        let mut w = Matrix::zeros(2, 2);
        w[(1, 0)] = f64::INFINITY;
        assert!(matches!(svd(&w), Err(Error::NonFinite { row: 1, col: 0, .. })));
    }

    #[test]
    fn truncate_examples() {
        let s = svd(&Matrix::diag(&[3.0, 2.0, 1.0])).unwrap();
        let f = truncate(&s, 2).unwrap();
        let p = f.product();
        assert!(p.sub(&Matrix::diag(&[3.0, 2.0, 0.0])).unwrap().max_abs() < 1e-14);
        assert!(truncate(&s, 0).is_err());
        assert!(truncate(&s, 4).is_err());

        let x = [1.0, -2.0, 0.5, 3.0];
        let y = [2.0, 1.0, -1.0];
        let w = Matrix::from_fn(4, 3, |i, j| x[i] * y[j]);
        let f = truncate(&svd(&w).unwrap(), 1).unwrap();
        assert!(frobenius_error(&w, &f).unwrap() <= 1e-10);
    }

    #[test]
    fn truncation_error_is_sigma_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = Matrix::random_normal(6, 5, 1.0, &mut rng);
        let s = svd(&w).unwrap();
        let f = truncate(&s, 3).unwrap();
        let tail = (s.sigma[3].powi(2) + s.sigma[4].powi(2)).sqrt();
        assert!((frobenius_error(&w, &f).unwrap() - tail).abs() < 1e-8);

        let w = Matrix::random_normal(8, 8, 1.0, &mut rng);
        let s = svd(&w).unwrap();
        let f = truncate(&s, 4).unwrap();
        let tail = s.sigma[4..].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((frobenius_error(&w, &f).unwrap() - tail).abs() < 1e-8);
    }

    #[test]
    fn frobenius_error_examples() {
        let w = Matrix::diag(&[3.0, 2.0, 1.0]);
        let f = truncate(&svd(&w).unwrap(), 2).unwrap();
        assert!((frobenius_error(&w, &f).unwrap() - 1.0).abs() < 1e-12);
        let full = truncate(&svd(&w).unwrap(), 3).unwrap();
        assert!(frobenius_error(&w, &full).unwrap() < 1e-10);
        assert!(frobenius_error(&Matrix::zeros(2, 3), &full).is_err());
    }

    #[test]
    fn rank_examples() {
        assert_eq!(numerical_rank(&Matrix::identity(4), DEFAULT_RANK_TOL).unwrap(), 4);
        assert_eq!(numerical_rank(&Matrix::zeros(5, 3), DEFAULT_RANK_TOL).unwrap(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut w = Matrix::zeros(10, 8);
        for r in [1, 4, 7] {
            for c in 0..8 {
                w[(r, c)] = rand::Rng::gen_range(&mut rng, -1.0..1.0);
            }
        }
        assert!(numerical_rank(&w, DEFAULT_RANK_TOL).unwrap() <= 3);
        assert!(numerical_rank(&w, 0.0).is_err());
    }

    #[test]
    fn cumulative_fraction_examples() {
        assert!((cumulative_singular_fraction(&Matrix::identity(4), 2).unwrap() - 0.5).abs() < 1e-15);
        let w = Matrix::from_fn(3, 3, |i, j| (i + 1) as f64 * (j as f64 - 1.5));
        assert!((cumulative_singular_fraction(&w, 1).unwrap() - 1.0).abs() < 1e-12);
        let d = Matrix::diag(&[3.0, 2.0, 1.0]);
        assert!((cumulative_singular_fraction(&d, 2).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(cumulative_singular_fraction(&Matrix::zeros(3, 3), 1).unwrap(), 1.0);
        assert!(cumulative_singular_fraction(&d, 4).is_err());
    }
}
