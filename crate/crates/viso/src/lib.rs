//! File formats, writers and command implementations for the `viso` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod scene_file;

pub use error::CliError;
