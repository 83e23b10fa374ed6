//! Benchmark harness for `weaver-core`: task files, method × budget sweeps,
//! Acc@B and cost-utilization reports.

pub mod config;
pub mod metrics;
pub mod report;
pub mod sweep;
pub mod tasks;

use thiserror::Error;

pub use config::BenchConfig;
pub use metrics::{acc_at_b, CellSummary, Outcome};
pub use report::{emit_reports, persist_logs, summaries_from_logs};
pub use sweep::{regrade, run_sweep, Artifacts, Backends, SweepResult, SweepSpec};
pub use tasks::{load_tasks, synth_tasks, world_for, TaskRecord};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no results to score")]
    EmptyResults,
    #[error("{0}")]
    Precondition(String),
    #[error("config: {0}")]
    Config(String),
    #[error("task file line {line}: {reason}")]
    TaskFile { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Reflect(#[from] weaver_core::reflection::ReflectError),
}
