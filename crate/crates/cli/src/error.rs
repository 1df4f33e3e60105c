use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),

    #[error("exact oracle disagrees with the ground truth: L1 = {l1:e}")]
    OracleMismatch { l1: f64 },

    #[error(transparent)]
    Core(#[from] sculpt::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ConfigError",
            CliError::MissingCheckpoint(_) => "MissingCheckpoint",
            CliError::OracleMismatch { .. } => "OracleMismatch",
            CliError::Core(_) => "CoreError",
            CliError::Io(_) => "IoError",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({ "error": self.kind(), "message": self.to_string() })
    }
}
