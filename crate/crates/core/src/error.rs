use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record did not match its interchange schema.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Cross-record invariant violated (duplicate ids, dangling references).
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("template error: {0}")]
    Template(String),

    /// Model output could not be turned into structured data.
    #[error("could not parse model output: {message}")]
    OutputParse { message: String, raw: String },

    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// True for failures that originate in a remote model or grading service.
    pub fn is_provider_failure(&self) -> bool {
        matches!(self, Error::Provider(_))
    }
}

/// Failure talking to an embedding, generation or grading service.
#[derive(Debug, Clone, Error)]
pub enum ProviderError {
    /// Worth retrying: connection failures, 5xx, 429.
    #[error("transient provider failure: {0}")]
    Transient(String),

    #[error("provider failure: {0}")]
    Fatal(String),

    #[error("provider returned malformed response: {0}")]
    Malformed(String),
}

impl ProviderError {
    pub fn is_transient(&self) -> bool {
        matches!(self, ProviderError::Transient(_))
    }
}
