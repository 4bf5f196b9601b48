use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("record `{id}`: {message}")]
    Record { id: String, message: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("embedding provider: {0}")]
    Provider(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line contract: 2 input/usage,
    /// 3 numerical abort, 4 verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) => 3,
            Error::Verification(_) => 4,
            _ => 2,
        }
    }
}
