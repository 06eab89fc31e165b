use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed JSON or a record that does not match the expected schema.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Input was well-formed but violates a domain invariant.
    #[error("{0}")]
    Validation(String),

    /// An operation was called outside its precondition (empty input, k too large, ...).
    #[error("{0}")]
    InvalidArgument(String),

    #[error("embedding service: {0}")]
    Remote(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
