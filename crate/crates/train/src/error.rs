use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config key `{key}`: {message}")]
    ConfigKey { key: String, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] graphprune_core::Error),
    #[error(transparent)]
    Policy(#[from] graphprune_policy::PolicyError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl TrainError {
    pub fn key(key: impl Into<String>, message: impl Into<String>) -> Self {
        TrainError::ConfigKey {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;
