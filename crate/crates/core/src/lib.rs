//! Low-rank prune-and-factorize compression for small feed-forward classifiers.
//!
//! The crate trains a dense MLP, prunes it with first-order (or magnitude)
//! importance scores under a cubic sparsity schedule, factorizes each pruned
//! weight matrix with a row-weighted truncated SVD, and recovers accuracy with
//! mixed-rank fine-tuning. Every stage is deterministic given a seed and can be
//! checkpointed to disk.
//!
//! See the `examples/` directory for one runnable program per stage.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod factorize;
pub mod io;
pub mod linalg;
pub mod mixedrank;
pub mod nn;
pub mod pipeline;
pub mod prune;

pub use error::{Error, Result};
