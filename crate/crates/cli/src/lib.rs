//! Experiment orchestration for the `glmdp` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod records;

pub use commands::{cmd_generate, cmd_report, cmd_run, cmd_sweep};
pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, CliResult};
