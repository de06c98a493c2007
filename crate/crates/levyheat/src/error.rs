use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("reversed interval ({0}, {1}]")]
    ReversedInterval(f64, f64),
    #[error("time {t} outside [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("mesh mismatch: expected {expected} cells, got {got}")]
    MeshMismatch { expected: usize, got: usize },
    #[error("integrand is not predictable: {0}")]
    NonPredictable(String),
    #[error("rate fit needs at least 3 valid points, got {0}")]
    InsufficientPoints(usize),
    #[error("reference self-convergence gate failed: {0}")]
    GateFailed(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
