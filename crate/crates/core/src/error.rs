//! Error type shared by every module of the simulator.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value failed validation. `path` is the dotted field path.
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    /// An argument fell outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A file did not match its expected format.
    #[error("format error{}: {msg}", offset.map(|o| format!(" at byte {o}")).unwrap_or_default())]
    Format { offset: Option<u64>, msg: String },

    #[error("calibration error: {0}")]
    Calibration(String),

    /// The operation needs state that has not been established yet.
    #[error("state error: {0}")]
    State(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn format(offset: Option<u64>, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
