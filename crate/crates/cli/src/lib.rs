//! Data handling and experiment orchestration for the `scca` command.

pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod synth;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use experiment::{run, ResultRecord, RunOutput};
