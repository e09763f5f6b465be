use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("lambda = {lambda} is not admissible: Hardy constant of the cap is {lambda_star}")]
    Inadmissible { lambda: f64, lambda_star: f64 },

    #[error("the extension operator is not positive definite at lambda = {lambda}; lambda lies above the admissible range")]
    NotCoercive { lambda: f64 },

    #[error("non-integrable quantity: {0}")]
    NonIntegrable(String),

    #[error("trivial field: {0}")]
    TrivialField(String),

    #[error("index {index} out of range (length {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
