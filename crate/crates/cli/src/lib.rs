//! Command-line driver for the `evfusion` pipeline.
//!
//! Exit codes: 0 success, 1 I/O or data error, 2 usage or contract error.
//! Diagnostics go to stderr; results go to stdout or files.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;

use clap::Parser;

pub use commands::Cli;

/// A failure tagged with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<evfusion::Error> for CliError {
    fn from(e: evfusion::Error) -> Self {
        if e.is_contract() {
            CliError::usage(e.to_string())
        } else {
            CliError::data(e.to_string())
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
