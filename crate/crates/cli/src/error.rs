use std::path::PathBuf;

use thiserror::Error;

use crate::checkpoint::Stage;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint at {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: surveyor_core::Error,
    },
    #[error("evaluation failed: {0}")]
    Evaluation(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] surveyor_core::Error),
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Checkpoint { .. } => 2,
            CliError::Stage { .. } => 3,
            CliError::Evaluation(_) => 4,
            CliError::NotFound(_) | CliError::Io { .. } | CliError::Core(_) => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
