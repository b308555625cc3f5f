use thiserror::Error;

use crate::sysfile::SysFileError;

/// Failures of a command, each tied to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Parse(#[from] SysFileError),
    #[error("{file}: {error}")]
    File { file: String, error: SysFileError },
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error("inconsistent system: {0}")]
    Inconsistent(String),
    #[error("simulation failed: {0}")]
    Simulation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Parse(_) | CliError::File { .. } => 1,
            CliError::CheckFailed(_) => 2,
            CliError::Inconsistent(_) => 3,
            CliError::Simulation(_) => 4,
        }
    }
}
