//! The `churn` command line: file formats, checkpoints and subcommands.

pub mod checkpoint;
pub mod commands;
pub mod formats;
pub mod graymap;

pub use commands::{run, Cli};
