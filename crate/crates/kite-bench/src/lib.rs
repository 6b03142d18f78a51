//! Benchmark harness for the kite planners: Monte-Carlo execution of
//! returned plans through ground-truth stochastic dynamics, unified
//! Wasserstein cost measurement across planning modes, goal-probability
//! bound auditing, and deterministic CSV/SVG reporting.
//!
//! The pieces compose into the experiment runner ([`run_experiment`]): a
//! method grid is evaluated over shared problem instances, every run is
//! seeded by a counter-based split of one master seed, and the records are
//! emitted in a worker-count-independent order.

pub mod audit;
pub mod execute;
pub mod record;
pub mod report;
pub mod runner;
pub mod unify;

pub use audit::{verify_bound, BoundViolation};
pub use execute::{monte_carlo_execute, CarTruthExecutor, McOutcome, PusherTruthExecutor, StochasticExecutor};
pub use record::{records_from_csv, records_to_csv, RunRecord, RECORD_CSV_HEADER};
pub use report::{aggregate_csv, emit_outputs};
pub use runner::{run_experiment, split_seed, ExperimentSpec, MethodSpec, SeedStream, TaskKind};
pub use unify::{
    unify_cost, unify_rollout, BeliefDynamics, CarUnifiedDynamics, LearnedPushUnifiedDynamics,
    TruthPushUnifiedDynamics,
};

use kite::learning::LearnError;
use kite::planner::PlanError;
use kite::systems::SystemError;

/// Errors surfaced by the harness and CLI.
#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("plan is unsolved; nothing to execute")]
    Unsolved,
    #[error("re-propagation failed: {0}")]
    Eval(String),
    #[error("invalid experiment spec: {0}")]
    BadSpec(String),
    #[error("malformed records CSV: {0}")]
    BadCsv(String),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
