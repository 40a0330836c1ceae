//! Command-line front end for the damped wave solver: configuration files,
//! subcommands and CSV output.

pub mod commands;
pub mod config;
pub mod output;
