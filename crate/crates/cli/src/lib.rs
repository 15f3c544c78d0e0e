//! Experiment runner over the `fedlab` simulator.

pub mod args;
pub mod commands;
pub mod plan;

pub use commands::{cmd_run, cmd_stability, cmd_sweep, Summary};
pub use plan::{ExperimentPlan, Settings};
