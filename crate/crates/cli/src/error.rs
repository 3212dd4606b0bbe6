use eqrgmm::Error as CoreError;
use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Io(_) => 5,
        }
    }

    pub fn field(field: &str, msg: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("'{field}': {msg}"))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e.root_cause() {
            CoreError::Domain(_) | CoreError::Shape { .. } | CoreError::UnsupportedOracle(_) => {
                CliError::Validation(msg)
            }
            CoreError::DegenerateDesign { .. }
            | CoreError::Convergence { .. }
            | CoreError::DegenerateWindow { .. } => CliError::Numeric(msg),
            CoreError::ModelFormat(_) | CoreError::Json(_) => CliError::Parse(msg),
            CoreError::Io(_) => CliError::Io(msg),
            CoreError::AtLevel { .. } | CoreError::Replicate { .. } => CliError::Numeric(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(format!("cannot write JSON: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
