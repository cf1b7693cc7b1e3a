//! Error type shared across the workbench.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, parameters, or CLI input.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Numeric failure (non-finite values, overflow) during simulation or training.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A statistic could not be computed (e.g. zero-variance paired differences).
    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    /// Malformed or mismatched weight checkpoint.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 for validation problems, 2 for
    /// runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Checkpoint(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
