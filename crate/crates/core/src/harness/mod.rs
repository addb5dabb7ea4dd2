//! Experiment configuration, trial orchestration and result files.

pub mod commands;
pub mod config;
pub mod trial;

pub use commands::{cmd_bench, cmd_generate, cmd_run, cmd_se, cmd_sweep};
pub use config::{Algorithm, ChannelSource, ExperimentConfig};
pub use trial::{run_trial, run_trials, Summary, TrialOutcome};
