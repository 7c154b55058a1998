//! Experiment runner for MCMC-interactive variational inference: JSON
//! configs in, CSV and JSON artifacts out.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod synth;

pub use config::{Config, Experiment};
pub use error::{CliError, Result};
pub use experiments::{run, run_config, RunOptions, RunReport};
