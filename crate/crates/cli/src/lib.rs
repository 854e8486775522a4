//! Command-line front end: config resolution, experiment runs, CSV and SVG
//! output, and the verification report.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod output;
pub mod svg;
pub mod verify;

pub use commands::{run, Cli, Command, Outcome};
pub use error::CliError;
