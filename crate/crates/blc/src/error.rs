//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by tensor ops, analysis routines, training, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or extents that do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Out-of-range axes, bad token ids, unknown enum tags and the like.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A dense materialization would exceed the configured element limit.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// Fixed-point iteration (ICA) failed to converge.
    #[error("did not converge after {iterations} iterations (last delta {delta:.3e})")]
    Convergence { iterations: usize, delta: f64 },

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: {reason}")]
    Training { step: usize, reason: String },

    /// Malformed bytes in a tensor file (bad magic, reserved bytes set, ...).
    #[error("format error: {0}")]
    Format(String),

    /// Payload length inconsistent with the declared extents.
    #[error("length error: {0}")]
    Length(String),

    /// Unknown dtype or manifest version.
    #[error("unsupported version: {0}")]
    Version(String),

    /// Checkpoint hash mismatch or missing tensor file.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Inputs that violate a cross-value precondition (e.g. path components
    /// that do not sum to the residual stream).
    #[error("inconsistent inputs: {0}")]
    Consistency(String),

    /// Bad CLI flags or config file contents.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 usage/config, 3 training,
    /// 4 verification, 5 I/O and integrity.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Dimension(_)
            | Error::Argument(_)
            | Error::Capacity(_)
            | Error::Consistency(_)
            | Error::Convergence { .. }
            | Error::Config(_) => 2,
            Error::Training { .. } => 3,
            Error::Format(_)
            | Error::Length(_)
            | Error::Version(_)
            | Error::Integrity(_)
            | Error::Io(_)
            | Error::Json(_) => 5,
        }
    }
}
