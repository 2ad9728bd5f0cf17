//! Command implementations behind the `ebmc` binary.
//!
//! Commands read sparse matrices from triple files (`row,col,value`, 1-based
//! indices), write outputs atomically (temporary file in the target
//! directory, renamed on success), and report failures through exit codes:
//! `2` input parse error, `3` invalid flags or parameters, `4` numerical
//! failure.

pub mod commands;
pub mod triples;

use std::fmt;

/// Command error carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Malformed input file.
    Parse(String),
    /// Invalid flag value or an operation precondition the caller controls.
    Flags(String),
    /// Numerical failure inside a solver.
    Numeric(String),
    /// Filesystem problem.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Flags(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse(msg) => write!(f, "parse error: {msg}"),
            CliError::Flags(msg) => write!(f, "invalid arguments: {msg}"),
            CliError::Numeric(msg) => write!(f, "numerical failure: {msg}"),
            CliError::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl From<ebmc::Error> for CliError {
    fn from(e: ebmc::Error) -> Self {
        match e {
            ebmc::Error::InvalidInput(msg) => CliError::Flags(msg),
            ebmc::Error::Dimension(msg) => CliError::Flags(msg),
            ebmc::Error::Conditioning(msg) => CliError::Numeric(msg),
            ebmc::Error::RankDeficient(msg) => CliError::Numeric(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
