//! Communication-efficient distributed robust linear regression.
//!
//! The library fits linear models on sharded data by communicating only
//! gradient vectors: each round the central machine gathers the global
//! Huber-loss gradient, forms a shifted local loss whose gradient matches it
//! at the current iterate, and re-solves locally. Alongside the estimators it
//! provides averaged sandwich variance estimates with normal-based confidence
//! intervals, l1-penalized variants for sparse high-dimensional models, and a
//! seeded Monte Carlo harness that writes CSV summaries.

// Numeric-code idioms used throughout: negated comparisons like `!(x > 0.0)`
// deliberately reject NaN, and indexed loops over row-major buffers are the
// natural access pattern here.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::unnecessary_map_or)]
#![allow(clippy::manual_is_multiple_of)]

pub mod data;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod highdim;
pub mod inference;
pub mod model;
pub mod runtime;
pub mod solvers;

pub use error::{Error, Result};
pub use model::{Coefficients, Dataset, RobustConfig, Shard};
