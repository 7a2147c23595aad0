use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sampling failed: {0}")]
    SamplingFailure(String),

    /// Input looks like it came from a law with atoms (too many exact ties).
    #[error("input is not absolutely continuous: {0}")]
    NotAbsolutelyContinuous(String),

    #[error("support box captures only {captured:.3e} of the source mass")]
    InsufficientMass { captured: f64 },

    #[error("operation unsupported for this source: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
