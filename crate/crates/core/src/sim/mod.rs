//! Deterministic discrete-event simulation of a delegation market.
//!
//! [`run`] executes a [`Scenario`] and returns its JSON-lines event log with
//! a digest and metrics; [`replay`] recomputes both from the log text alone.
//! The [`audit`] functions check protocol properties on any log.

pub mod audit;
mod engine;
pub mod log;
pub mod scenario;

pub use engine::run;
pub use log::{compute_metrics, log_digest, metrics_csv, replay, LogLine, Metrics, Record, RunResult};
pub use scenario::{
    honest_population, inject, load_scenario, merge_json, random_scenario, AgentSpec, ExplicitTask, ExternalEvent,
    ExternalKind, Policy, Role, Scenario, SimConfig, Workload,
};

use crate::Tick;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invariant violated at tick {tick}: {detail}")]
    InvariantViolation { tick: Tick, detail: String },
    #[error("replay mismatch: {0}")]
    ReplayMismatch(String),
}
