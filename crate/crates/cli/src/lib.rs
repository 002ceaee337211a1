//! The `ivy` command-line pipeline: holdout trace generation, offline
//! collection, training, evaluation and interval ablation.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{keys_help, RawConfig, RunConfig, Sigma};
pub use error::CliError;
