use thiserror::Error;

/// Errors raised by kernel evaluation, transport, simulation and diagnostics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("integral diverges: {0}")]
    Divergence(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("size mismatch: {left} atoms vs {right} atoms")]
    SizeMismatch { left: usize, right: usize },

    #[error("non-finite coefficient output at t = {t}, x = {x:?}")]
    NonFiniteOutput { t: f64, x: Vec<f64> },

    #[error("non-finite particle state at step {step} (particle {particle})")]
    NonFiniteState { step: usize, particle: usize },

    #[error("mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("insufficient lags: {0}")]
    InsufficientLags(String),

    #[error("ensemble carries no drift/martingale accumulators")]
    MissingAccumulators,

    #[error("ladder too short: {0}")]
    LadderTooShort(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
