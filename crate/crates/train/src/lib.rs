//! Proximal policy optimisation of the pruning policy over rollouts from the
//! exploration simulator.

pub mod config;
pub mod error;
pub mod gae;
pub mod log;
pub mod ppo;
pub mod replay;
pub mod rollout;
pub mod trainer;

pub use config::TrainConfig;
pub use error::{Result, TrainError};
pub use gae::{compute_gae, normalize};
pub use ppo::{ppo_update, PpoConfig, UpdateStats};
pub use replay::{replay_log, ReplayReport};
pub use rollout::{collect_window, episode_seed, DecodeSpec, Transition, Worker};
pub use trainer::{train, TrainCheckpoint, TrainSummary, Trainer};
