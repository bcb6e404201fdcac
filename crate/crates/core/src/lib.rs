//! Nonlinear filtering for partially observed Markov processes, with
//! exponential stability certificates from the Dobrushin coefficients of the
//! transition and measurement kernels.
//!
//! The filter started from a wrong prior merges with the true filter
//! exponentially fast in expected total variation whenever
//! `(1 - delta(T)) (2 - delta(Q)) < 1`. The crate computes the coefficients
//! for finite and additive-Gaussian kernels, runs the filter recursion, and
//! measures the merging rate by seeded Monte Carlo.

pub mod cli;
pub mod error;
pub mod filter;
pub mod kernels;
pub mod measures;
pub mod modelio;
pub mod simulate;
pub mod stability;

pub use error::{Error, Result};
