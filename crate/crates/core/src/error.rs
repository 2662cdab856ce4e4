//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the audit pipeline.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Input violated a precondition (bad shape, empty data, bad config).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two tensors that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A computation produced NaN/Inf or diverged.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The operation is not available for this model or target.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A file had the wrong magic, truncated payload, or bad field.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidInput(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        CoreError::ShapeMismatch(msg.into())
    }
}
