//! The `docqa` command-line pipeline: `order → serialize → predict → eval →
//! analyze`, plus `sample` for multi-task mixtures.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod provenance;
pub mod toy;

pub use args::Cli;
pub use commands::run;
pub use error::{CliError, CliResult};
