//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration; the message names the offending key.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Tensor or matrix dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Malformed or inconsistent manifest data.
    #[error("manifest error: {0}")]
    Manifest(String),

    /// Waveform synthesis or WAV I/O problem.
    #[error("audio error: {0}")]
    Audio(String),

    /// Checkpoint serialization, deserialization, or compatibility problem.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training aborted (non-finite loss, incompatible batch, ...).
    #[error("training aborted: {0}")]
    Train(String),

    /// Evaluation input problem (misaligned clips, unknown clip or class ids).
    #[error("evaluation error: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
