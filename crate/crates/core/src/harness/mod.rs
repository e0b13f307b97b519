//! Configuration-driven runs, sweeps and reports.

mod config;
mod reports;
mod run;
mod sweep;
mod trace;

pub use config::{
    CostSpec, Experiment, HyperparamsSpec, InitSpec, MetricsSpec, ObjectiveSpec, RunConfig,
    StepSize, StepSizeRule, DEFAULT_TAUS, SCHEMA_VERSION,
};
pub use reports::{
    geomean, scalability_report, speedup_report, time_to_target, verify_bound, verify_invariants,
    BoundCheck, InvariantReport, ScalabilityReport, ScalabilityRow, SpeedupEntry, SpeedupReport,
};
pub use run::{mean_grad_norm_sq, run, run_experiment, RunOutcome};
pub use sweep::{run_many, sweep, workers_from_env, SweepGrid, SweepPoint, SweepResult, WORKERS_ENV};
pub use trace::{RunStatus, RunTrace, TraceMeta, TraceRow, TRACE_COLUMNS};
