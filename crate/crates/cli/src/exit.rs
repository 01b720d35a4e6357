use std::fmt;
use std::process::ExitCode;

use noma_beam::Error;

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, values or paths.
    Usage(String),
    /// Too many solver failures to trust the output.
    Solver(String),
    /// Data and models that do not fit together, or malformed inputs.
    Mismatch(String),
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Mismatch(_) => 4,
            CliError::Internal(_) => 1,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (CliError::Usage(m) | CliError::Solver(m) | CliError::Mismatch(m) | CliError::Internal(m)) = self;
        write!(f, "error: {m}")
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidParameter(_) | Error::Empty | Error::InsufficientSamples { .. } | Error::Io { .. } => {
                CliError::Usage(msg)
            }
            Error::Mismatch(_)
            | Error::ShapeMismatch(_)
            | Error::MissingModel { .. }
            | Error::InvalidModel(_)
            | Error::Malformed { .. }
            | Error::ZeroChannel(_)
            | Error::Json(_)
            | Error::Csv(_) => CliError::Mismatch(msg),
            _ => CliError::Internal(msg),
        }
    }
}
