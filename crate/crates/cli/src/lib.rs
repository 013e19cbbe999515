//! Command implementations behind the `gsde` binary.

pub mod commands;
pub mod config;
pub mod event;

use std::fmt;

/// Exit codes: 0 success, 1 verification FAIL, 2 configuration or parse error.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Failed(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<gsde::Error> for CliError {
    fn from(e: gsde::Error) -> Self {
        match e {
            gsde::Error::Numerical { .. } => CliError::Failed(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}
