//! Command-line driver: configuration, checkpoints and the pipeline commands.

pub mod checkpoint;
pub mod commands;
pub mod config;

pub use checkpoint::Checkpoint;
pub use commands::{run, Cli, Command};
pub use config::{Precision, RunConfig};
