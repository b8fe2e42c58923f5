//! `audit`: command-line recipes over the `simaudit` library.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

pub mod commands;
pub mod config;
pub mod error;
pub mod meta;
pub mod recipes;
pub mod synth;

pub use error::{CliError, CliResult};
