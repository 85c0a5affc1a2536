use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or an unsatisfiable combination of settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor or image shapes that do not agree with a contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed or out-of-range input data.
    #[error("input error: {0}")]
    Input(String),

    /// Input for which the operation is undefined (e.g. an all-zero signal).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Non-finite values or a failed numerical routine.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn load(path: impl Into<PathBuf>, reason: impl std::fmt::Display) -> Self {
        Error::Load {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 3,
            Error::Io { .. } => 1,
            _ => 2,
        }
    }
}
