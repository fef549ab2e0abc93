//! Command-line companion crate: file formats, dataset IO, checkpoints, and
//! the `pan` subcommands over the numeric core.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod container;
pub mod dataset;
pub mod error;

pub use config::{config_keys_help, RunConfig, CONFIG_KEYS};
pub use error::{CliError, Result};
