//! Library side of the `blowup-lab` command-line tool: configuration,
//! subcommand bodies and output writers.

pub mod commands;
pub mod config;
pub mod output;
pub mod svg;
