//! Experiment orchestration: configuration, seed derivation, arm execution
//! and plot-data reporting.

pub mod config;
pub mod report;
pub mod runner;
pub mod seeds;

pub use config::{DatasetKind, DefenseMode, EvalMetricCfg, ExperimentConfig};
pub use report::{emit_plot_data, load_run, load_runs, LoadedRun};
pub use runner::{run_experiment, run_matrix, ArmKind, RunOutcome, RunRow, RunSummary};
pub use seeds::SubSeeds;
