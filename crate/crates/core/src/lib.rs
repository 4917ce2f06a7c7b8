//! Frontier-based exploration on an occupancy grid with a global RRT whose
//! growth is cancelled by pruning.
//!
//! The pieces compose into [`env::ExplorationEnv`], which runs one episode a
//! step at a time under a caller-supplied [`env::PruneDecision`].

pub mod env;
pub mod error;
pub mod export;
pub mod gmm;
pub mod grid;
pub mod observation;
pub mod pruner;
pub mod reward;
pub mod tree;

pub use env::{derive_seed, ExplorationEnv, PruneDecision, SimConfig, StepOutcome, TerminalCause};
pub use error::{Error, Result};
pub use gmm::{GmmAction, GmmComponent};
pub use grid::{Cell, EnvConfig, GridMap, RobotState};
pub use tree::{ExplorationTree, NodeClass, NodeId};
