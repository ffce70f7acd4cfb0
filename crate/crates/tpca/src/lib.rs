//! Tensor probabilistic PCA.
//!
//! A probabilistic PCA model whose loading operator is a Tucker map between
//! tensor spaces. The crate provides the dense multilinear toolbox, the model
//! itself (sampling, likelihood, covariance spectrum), two estimators (EM and
//! a rank-one-update power iteration on the sample covariance), finite-sample
//! recovery diagnostics, subspace-error evaluation, and a seeded experiment
//! harness used by the CLI.

pub mod diagnostics;
pub mod em;
pub mod error;
pub mod eval;
pub mod harness;
pub mod io;
pub mod model;
pub mod power;
pub mod tensor;

pub use error::{Result, TpcaError};
