use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Pipeline stage label; partitions the api-tier cache.
    pub tag: String,
    /// Regeneration index within one structured call. Part of the cache key.
    #[serde(default)]
    pub attempt: u32,
}

impl CompletionRequest {
    pub fn new(tag: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            temperature: 0.0,
            max_output_tokens: 4096,
            tag: tag.into(),
            attempt: 0,
        }
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn max_output_tokens(mut self, n: u32) -> Self {
        self.max_output_tokens = n;
        self
    }

    pub fn attempt(mut self, n: u32) -> Self {
        self.attempt = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt.trim().is_empty() {
            return Err(Error::InvalidInput("prompt must be non-empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::InvalidInput(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(Error::InvalidInput("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Failure reported by a transport, before retry policy is applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Status { code: u16, message: String },
    /// Connection failures and timeouts; always retryable.
    Network(String),
}

impl TransportError {
    pub fn status(code: u16) -> Self {
        TransportError::Status {
            code,
            message: String::new(),
        }
    }

    pub fn code(&self) -> Option<u16> {
        match self {
            TransportError::Status { code, .. } => Some(*code),
            TransportError::Network(_) => None,
        }
    }
}

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransportError::Status { code, message } => write!(f, "status {code}: {message}"),
            TransportError::Network(m) => write!(f, "network error: {m}"),
        }
    }
}

/// A text-generation transport. Retries and caching live in the gateway.
pub trait TextBackend: Send + Sync {
    fn generate(&self, req: &CompletionRequest) -> std::result::Result<String, TransportError>;

    fn name(&self) -> String {
        "text-backend".into()
    }
}

/// An embedding transport returning raw (unnormalized) vectors.
pub trait EmbeddingBackend: Send + Sync {
    fn embed_batch(&self, texts: &[String]) -> std::result::Result<Vec<Vec<f64>>, TransportError>;

    fn name(&self) -> String {
        "embedding-backend".into()
    }
}
