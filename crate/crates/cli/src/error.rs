use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Stable process exit status for each failure class.
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Io { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Verification(_) => 4,
        })
    }
}

impl From<liqtimer::Error> for CliError {
    fn from(e: liqtimer::Error) -> Self {
        use liqtimer::Error as E;
        match e {
            E::Invalid(_) | E::Domain(_) | E::Unsupported(_) => CliError::Config(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
