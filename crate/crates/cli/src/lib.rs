//! Experiment driver behind the `tmc` binary: configuration, pipeline
//! stages and their on-disk artifacts.

pub mod config;
pub mod pipeline;

pub use config::{DataConfig, ExperimentConfig, Overrides, Precision};
pub use pipeline::{compare_models, exit_code, run_experiment};

/// Invalid or inconsistent configuration.
#[derive(Debug, thiserror::Error)]
#[error("config: {0}")]
pub struct ConfigError(pub String);
