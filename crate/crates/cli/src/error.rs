use std::path::Path;

use thiserror::Error;

/// Failure categories, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("ConfigInvalid: {0}")]
    ConfigInvalid(String),
    #[error("MissingArtifact: {0}")]
    MissingArtifact(String),
    #[error("IoFailure: {0}")]
    IoFailure(String),
    #[error("InvariantViolation: {0}")]
    Invariant(String),
}

impl CliError {
    pub fn config(msg: String) -> Self {
        Self::ConfigInvalid(msg)
    }

    pub fn missing(path: &Path, needed_by: &str) -> Self {
        Self::MissingArtifact(format!("{} (needed by `{needed_by}`)", path.display()))
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::IoFailure(format!("{}: {e}", path.display()))
    }

    pub fn invariant(e: impl std::fmt::Display) -> Self {
        Self::Invariant(e.to_string())
    }

    pub fn category(&self) -> &'static str {
        match self {
            Self::ConfigInvalid(_) => "ConfigInvalid",
            Self::MissingArtifact(_) => "MissingArtifact",
            Self::IoFailure(_) => "IoFailure",
            Self::Invariant(_) => "InvariantViolation",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::ConfigInvalid(_) => 2,
            Self::MissingArtifact(_) => 3,
            Self::IoFailure(_) => 4,
            Self::Invariant(_) => 5,
        }
    }

    /// One line, `error: <Category>: <message>`, newlines flattened.
    pub fn line(&self) -> String {
        format!("error: {}", self.to_string().replace('\n', " "))
    }
}
