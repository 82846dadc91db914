//! Error type shared across the crate.

use thiserror::Error;

/// Broad failure category, used by callers (e.g. the CLI) to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum OddaError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl OddaError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            OddaError::Config(_) => ErrorKind::Config,
            OddaError::Data(_) | OddaError::MalformedRecord { .. } | OddaError::Io(_) => {
                ErrorKind::Data
            }
            OddaError::Numeric(_) => ErrorKind::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, OddaError>;
