use thiserror::Error;

/// Errors raised when an operation's input contract is violated.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("measure is not absolutely continuous: index {index} has mass {mass} under p but zero under q")]
    NotAbsolutelyContinuous { index: usize, mass: f64 },

    #[error("grid domains differ: [{lo_a}, {hi_a}] x {cells_a} vs [{lo_b}, {hi_b}] x {cells_b}")]
    DomainMismatch {
        lo_a: f64,
        hi_a: f64,
        cells_a: usize,
        lo_b: f64,
        hi_b: f64,
        cells_b: usize,
    },

    #[error("output grid truncates {lost:.3e} of the pushforward mass (limit {limit:.0e})")]
    Truncation { lost: f64, limit: f64 },

    #[error("unknown action {0:?}")]
    UnknownAction(String),

    #[error("observation {0} is incompatible with the likelihood model")]
    ObservationKind(String),

    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, Error>;
