//! Command-line front end for the `dcan` library: synthetic data, preprocessing,
//! training, evaluation and prediction driven by one TOML configuration.

pub mod cli;
pub mod commands;
pub mod config;

pub use cli::{run, Cli, Command};
pub use config::RunConfig;
