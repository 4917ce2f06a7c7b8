//! Gated Transformer-XL actor-critic over observation patch tokens, with a
//! diagonal-Gaussian distribution over raw mixture parameters.

pub mod action;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod tape;

pub use action::{entropy, log_prob, mean_action, sample_action, to_gmm};
pub use checkpoint::PolicyCheckpoint;
pub use config::{PolicyConfig, Profile};
pub use error::{PolicyError, Result};
pub use model::{gradients, ActorCritic, EpisodicMemory, PolicyOutput, TapeOutput};
pub use optim::Adam;
pub use tape::{Gradients, Matrix, ParamId, ParamStore, Tape, Var};

use graphprune_core::observation::TokenSequence;

/// Token sequence as an `n_tokens x token_len` matrix.
pub fn token_matrix(tokens: &TokenSequence) -> Matrix {
    Matrix::from_vec(tokens.len(), tokens.token_len(), tokens.data.clone())
}
