//! Command-line front end for the Gerber-Shiu solvers.

pub mod config;
pub mod error;
pub mod run;

pub use config::{parse_config, ExperimentConfig, Method};
pub use error::CliError;
