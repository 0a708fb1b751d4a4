use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("no entailment verdict for claim {claim} with references {subset}")]
    MissingVerdict { claim: usize, subset: String },

    #[error("backend failure: {0}")]
    Backend(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("could not write report: {0}")]
    Report(String),
}

impl From<surveyor_core::Error> for EvalError {
    fn from(e: surveyor_core::Error) -> Self {
        EvalError::Backend(e.to_string())
    }
}
