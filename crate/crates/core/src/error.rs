use std::path::PathBuf;

use thiserror::Error;

/// Toolkit-wide error type.
///
/// `Contract` marks a violated caller precondition, `Config` a bad
/// configuration value. Both map to exit code 1 at the CLI boundary;
/// `Io`/`Format` map to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input: {0}")]
    Format(String),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Process exit status for the CLI: 1 for contract/config, 2 for i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Contract(_) | Error::Config(_) => 1,
            Error::Io { .. } | Error::Format(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
