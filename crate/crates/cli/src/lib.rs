//! File formats and subcommands behind the `netresp` binary.

pub mod commands;
pub mod dataset;
pub mod error;
pub mod format;
pub mod report;

pub use error::{CliError, CliResult};
