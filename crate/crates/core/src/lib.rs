//! Differentially private chart synthesis with pattern constraints.
//!
//! A Bayesian network is learned over the discretized attributes with the
//! exponential mechanism, its AP-pair marginals are privatized with Laplace
//! noise, and synthetic rows are sampled from the noisy conditionals. User
//! selected chart patterns raise the mixture weight of their records so that
//! structure learning favors dependencies those patterns rely on.

// `!(x > 0.0)` is used deliberately so NaN is rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod bayes;
pub mod charts;
pub mod data;
pub mod dp;
pub mod engine;
pub mod error;
pub mod fixtures;
pub mod metrics;

pub use error::{Error, Result};
