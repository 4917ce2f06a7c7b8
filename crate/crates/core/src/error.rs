use thiserror::Error;

use crate::tree::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("no valid map after {attempts} generation attempts; obstacle config too dense")]
    Generation { attempts: u32 },
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("node {0} is protected (root or robot anchor) and cannot be removed")]
    ProtectedNode(NodeId),
    #[error("move target {0} is not on a free explored cell")]
    InvalidTarget(NodeId),
    #[error("robot has used all {0} moves")]
    MovesExhausted(u32),
    #[error("reward for an empty prune set is undefined")]
    EmptyPruneSet,
    #[error("image {height}x{width} is not divisible into {patch}x{patch} patches")]
    PatchSize {
        height: usize,
        width: usize,
        patch: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
