use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or inputs.
    #[error("{0}")]
    Invalid(String),

    /// Something failed while running a valid request.
    #[error("{0}")]
    Runtime(String),

    #[error(transparent)]
    Core(#[from] trochlea::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        let validation = match self {
            CliError::Invalid(_) => true,
            CliError::Runtime(_) => false,
            CliError::Core(e) => e.is_validation(),
        };
        ExitCode::from(if validation { 1 } else { 2 })
    }
}
