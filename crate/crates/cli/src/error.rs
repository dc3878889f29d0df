use std::process::ExitCode;

use thiserror::Error;

/// Failures of a command, classified by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration or input files (exit status 2).
    #[error("{0}")]
    Config(String),
    /// Numerical failure while computing (exit status 3).
    #[error("{0}")]
    Numerical(String),
    /// Output could not be written (exit status 1).
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
            CliError::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }

    /// A library error raised while validating inputs.
    pub fn config(e: emcmc::Error) -> Self {
        CliError::Config(e.to_string())
    }

    /// A library error raised while computing.
    pub fn numerical(e: emcmc::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
