//! Canonical correlation analysis through least squares.
//!
//! Linear CCA, sparse CCA (`l1`-penalized least squares solved by fixed-point
//! continuation), exact / regularized / sparse kernel CCA, and the metrics
//! used to evaluate them.
//!
//! Data matrices hold one sample per column: `X` is `d1 x n`, `Y` is `d2 x n`.

pub mod cca;
pub mod error;
pub mod eval;
pub mod fpc;
pub mod kcca;
pub mod kernels;
pub mod matops;

pub use error::{Error, Result};
pub use matops::DenseMatrix;
