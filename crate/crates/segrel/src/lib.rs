//! File formats, configuration and commands for `segrel-core`.
//!
//! - [`config`]: the TOML run configuration and its hash.
//! - [`record`]: the canonical JSONL dataset record.
//! - [`readers`]: tuple and key-value input formats for `transform`.
//! - [`checkpoint`]: vocabulary files and binary checkpoints.
//! - [`artifacts`]: training logs, generation files and reports.
//! - [`commands`]: the commands behind the `segrel` binary.
//! - [`cli`]: argument parsing.

pub mod artifacts;
pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod readers;
pub mod record;

pub use error::CliError;
