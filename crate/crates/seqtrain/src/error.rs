//! Error type shared across the framework. Configuration and usage problems
//! are distinguished from runtime failures so the CLI can map them to exit
//! codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("network error: {0}")]
    Network(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors a user caused (bad config, bad flags) as opposed to
    /// failures of a running job.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Network(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
