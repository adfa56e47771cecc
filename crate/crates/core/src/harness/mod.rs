//! Experiment runner: single runs, sweeps, metrics and reports.

pub mod config;
pub mod metrics;
pub mod report;
pub mod run;
pub mod sweep;

pub use config::{Axis, RunConfig, ScenarioConfig, SweepConfig};
pub use metrics::{classify, median, rmse, Outcome};
pub use run::{execute, run_case, RunOptions, RunOutput, RunRecord, RunStatus};
pub use sweep::{run_sweep, SweepResult};
