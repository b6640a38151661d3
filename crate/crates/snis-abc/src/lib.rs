//! Monte Carlo harness, report formats and CLI plumbing for the
//! `snis-abc-core` centroid estimators.

pub mod config;
pub mod demo;
pub mod error;
pub mod formats;
pub mod harness;
pub mod validate;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use harness::{
    run_baseline_comparison, run_point, run_scaling_experiment, Experiment, ReportKind,
    ScalingReport,
};
