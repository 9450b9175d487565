//! Library side of the `cleaneval` command: configuration and subcommands.

pub mod commands;
pub mod config;

pub use commands::{cmd_audit, cmd_emd, cmd_generate, cmd_run, format_emd};
pub use config::RunConfig;
