use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] afford_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    ConfigFile {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },

    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("runs disagree on checkpoints: {0}")]
    CheckpointMismatch(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Whether the failure is the caller's fault (bad flags or config)
    /// rather than a runtime problem.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::ConfigFile { .. } | Error::Core(afford_core::Error::Config(_)))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
