use std::path::PathBuf;

use thiserror::Error;

/// Broad failure classes; the CLI maps each to a distinct exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Io,
    Validation,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at record {index}: {message}")]
    Parse { index: usize, message: String },

    #[error("invalid instance {id}: {message}")]
    Validation { id: String, message: String },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unregistered special token {0:?}")]
    UnregisteredSpecial(String),

    #[error("{0}")]
    Shape(String),

    #[error("{0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            id: id.into(),
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            Error::Parse { .. }
            | Error::Validation { .. }
            | Error::Schema(_)
            | Error::UnregisteredSpecial(_)
            | Error::Shape(_) => ErrorClass::Validation,
            Error::Config(_) => ErrorClass::Usage,
            Error::Internal(_) => ErrorClass::Internal,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
