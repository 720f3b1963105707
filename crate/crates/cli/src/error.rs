use std::fmt;
use std::process::ExitCode;

use condcl_core::Error;

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// A check ran and did not pass (exit 1).
    Check(String),
    /// Bad flags, config, or input files (exit 2).
    Usage(String),
    /// Failure while running, e.g. a diverged training run (exit 3).
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    /// Errors while loading or validating inputs.
    pub fn input(e: Error) -> Self {
        CliError::Usage(e.to_string())
    }

    /// Errors while doing the work. Divergence and write failures abort the
    /// run; anything else traces back to the inputs.
    pub fn run(e: Error) -> Self {
        match e {
            Error::TrainingDiverged { .. } | Error::NonFinite(_) | Error::Io(_) => {
                CliError::Runtime(e.to_string())
            }
            other => CliError::Usage(other.to_string()),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Check(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Check(m) | CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
