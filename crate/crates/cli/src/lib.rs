//! Config-driven front end: collect → synthesize → simulate, parameter
//! sweeps, and summary tables. Every output file carries the tool version and
//! the SHA-256 of the resolved configuration.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{exit, CliError, CliResult};
