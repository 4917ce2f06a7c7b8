//! Command-line driver for training, paired evaluation of pruning
//! strategies, deterministic replay, map rendering and plots.

pub mod aggregate;
pub mod cli;
pub mod error;
pub mod eval;
pub mod plot;
pub mod render;

pub use aggregate::{aggregate, Summary};
pub use error::{HarnessError, Result};
pub use eval::{run_eval, EvalReport, EvalSpec, Strategy};
