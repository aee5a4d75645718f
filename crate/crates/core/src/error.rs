use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("probabilities sum to {sum}, not 1 (tolerance 1e-12)")]
    NotNormalized { sum: f64 },

    #[error("entry {index} must be strictly positive and finite, got {value}")]
    NonPositive { index: usize, value: f64 },

    #[error("invalid comparison set: {0}")]
    InvalidSet(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("comparison graph is disconnected")]
    Disconnected,

    #[error("replay stream exhausted after {consumed} samples")]
    ReplayExhausted { consumed: u64 },

    #[error("malformed sample: {0}")]
    MalformedSample(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("matrix is not reversible with respect to the given distribution (max violation {violation:e})")]
    NotReversible { violation: f64 },

    #[error("transition matrix is not ergodic: {0}")]
    NotErgodic(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("projection onto the feasible set did not converge after {sweeps} sweeps (violation {violation:e})")]
    ProjectionFailed { sweeps: usize, violation: f64 },

    #[error("sample list is empty")]
    EmptySamples,

    #[error("goodness-of-fit needs at least two bins after merging")]
    DegenerateBins,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
