use thiserror::Error;

/// Errors produced by the simulator and the planning policies.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty distribution")]
    EmptyDistribution,
    #[error("quantile level {0} outside (0, 1)")]
    AlphaOutOfRange(f64),
    #[error("invalid value for `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("time grid mismatch: {0}")]
    GridMismatch(String),
    #[error("insufficient history: need {needed} steps, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("policy `{policy}` requires a forecast")]
    MissingForecast { policy: &'static str },
    #[error("solver failure: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
