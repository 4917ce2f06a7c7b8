use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("strategy `{0}` needs a checkpoint")]
    MissingCheckpoint(String),
    #[error("episode seeds {first} and {second} collide (seed {seed})")]
    SeedCollision { first: usize, second: usize, seed: u64 },
    #[error("no records to aggregate")]
    EmptyRecords,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Train(#[from] graphprune_train::TrainError),
    #[error(transparent)]
    Policy(#[from] graphprune_policy::PolicyError),
    #[error(transparent)]
    Sim(#[from] graphprune_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
