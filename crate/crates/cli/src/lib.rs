//! Orchestration for the `teamopt` command-line tool: experiment configs,
//! problem construction, subcommands and output files.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod problem;
