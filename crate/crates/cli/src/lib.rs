//! Experiment runner behind the `sugar` binary.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{ExperimentConfig, Overrides};
pub use error::CliError;
