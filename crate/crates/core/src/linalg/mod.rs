//! Dense matrices, SVD, truncated factorization and rank diagnostics.

mod matrix;
mod svd;

pub use matrix::{axpy, dot, Matrix};
pub use svd::{
    cumulative_singular_fraction, frobenius_error, numerical_rank, svd, truncate, FactorPair, SvdResult,
    DEFAULT_RANK_TOL,
};
