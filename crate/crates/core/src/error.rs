use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("integrity violation: {0}")]
    Integrity(String),

    #[error("failed to persist {path}: {message}")]
    Persistence { path: PathBuf, message: String },

    #[error("failed to load {path}: {message}")]
    Load { path: PathBuf, message: String },

    #[error("backend rejected request with status {status}: {message}")]
    Backend { status: u16, message: String },

    #[error("backend retries exhausted after {attempts} attempts (last status {last_status:?})")]
    Exhausted {
        attempts: u32,
        last_status: Option<u16>,
    },

    #[error("token budget exceeded: {needed} > {budget}")]
    Budget { needed: usize, budget: usize },

    #[error("malformed model output after {attempts} attempts: {last_error}")]
    Malformed { attempts: u32, last_error: String },

    #[error("retrieval failed: {0}")]
    Retrieval(String),

    #[error("keynote extraction failed for {paper}: {message}")]
    Keynote { paper: String, message: String },

    #[error("drafting failed for node '{node}': {message}")]
    Drafting { node: String, message: String },

    #[error("assembly failed: missing draft for node '{0}'")]
    Assembly(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
