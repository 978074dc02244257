//! Command-line driver: configuration, subcommands and output handling.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{prepare, run, Command, Overrides};
pub use config::RunConfig;
pub use error::CliError;
