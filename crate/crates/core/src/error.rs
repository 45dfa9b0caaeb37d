use thiserror::Error;

/// Errors produced anywhere in the sequencing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Input data does not match the expected feature or file layout.
    #[error("schema error: {0}")]
    Schema(String),

    /// A caller broke an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration values.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An operation produced NaN or infinity.
    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    /// Training diverged; carries the batch that produced the bad loss.
    #[error("non-finite loss at step {step} (sessions: {})", sessions.join(","))]
    Diverged { step: usize, sessions: Vec<String> },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
