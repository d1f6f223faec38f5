//! Command-line harness over the engine crate: deterministic configs,
//! binary checkpoints, report emission, and self-contained SVG plots.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod svg;

pub use error::{CliError, CliResult};
