//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or batch dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A numeric precondition was violated (NaN/Inf where finite values are required).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An API was driven in an unsupported order (e.g. backward with a stale cache).
    #[error("usage error: {0}")]
    Usage(String),

    /// Cross-structure bookkeeping broke down (e.g. a distance entry is missing
    /// for a pair of OoD samples in a batch).
    #[error("consistency error: {0}")]
    Consistency(String),

    /// Experiment configuration is missing, malformed, or self-contradictory.
    #[error("config error: {0}")]
    Config(String),

    /// A data file does not match its declared format.
    #[error("format error in {path}: {message} (at byte offset {offset})")]
    Format {
        path: PathBuf,
        message: String,
        offset: u64,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
            offset,
        }
    }
}
