//! Distributional properties of post-model-selection estimators in nested
//! linear regression: exact finite-sample and limiting distributions, a
//! plug-in estimator of the finite-sample distribution, and Monte Carlo
//! experiments that probe whether that distribution can be estimated.

// Negated comparisons reject NaN along with out-of-range values, and model
// orders index several parallel arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod dist_exact;
pub mod dist_limit;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod fixtures;
pub mod linalg;
pub mod montecarlo;
pub mod normal;
pub mod quadrature;
pub mod regression;
pub mod report;
pub mod rng;
pub mod selection;
pub mod selftest;
pub mod terms;

pub use error::{Error, Result};
