//! Deterministic simulator for federated optimization.
//!
//! Implements FedAvg, FedSAM, MoFedSAM, SCAFFOLD, FedSWA and FedMoSWA on
//! synthetic tasks, plus a twin-run probe of algorithmic stability. All
//! numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for common use.

pub mod algorithms;
pub mod engine;
pub mod error;
pub mod numkit;
pub mod rng;
pub mod scalar;
pub mod schedules;
pub mod stability;
pub mod tasks;

pub use algorithms::{AlgoConfig, Algorithm, ClientState, CtrlInit, CtrlOption, ServerState};
pub use engine::{run_experiment, RoundRecord, RunConfig, RunMetrics, Simulation, TaskConfig};
pub use error::{FedError, Result};
pub use numkit::ParamVec;
pub use scalar::Scalar;
pub use schedules::LrSchedule;
pub use stability::{stability_sweep, theory_bound, StabilityReport, SweepAxis};
pub use tasks::{TaskKind, TaskSpec};

pub type ParamVec64 = ParamVec<f64>;
pub type ParamVec32 = ParamVec<f32>;
pub type TaskSpec64 = TaskSpec<f64>;
pub type TaskSpec32 = TaskSpec<f32>;
pub type RunConfig64 = RunConfig<f64>;
pub type RunConfig32 = RunConfig<f32>;
pub type ServerState64 = ServerState<f64>;
pub type ServerState32 = ServerState<f32>;
pub type Simulation64 = Simulation<f64>;
pub type Simulation32 = Simulation<f32>;
