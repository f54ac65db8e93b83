//! Configuration, subcommands and file export for the `vorwave` tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod export;

pub use commands::{run_command, Command, RunReport, REPORT_FILE};
pub use config::{parse_config, RunConfig};
pub use error::CliError;
