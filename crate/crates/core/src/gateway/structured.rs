//! Calls whose output must parse into a typed value, with regeneration.

use serde::de::DeserializeOwned;

use super::{CompletionRequest, Gateway};
use crate::error::{Error, Result};
use crate::model::{ErrorMemory, EventKind, EventLog};

/// Parameters of one structured call.
#[derive(Debug, Clone)]
pub struct CallSpec {
    pub tag: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Regenerations allowed after the first attempt.
    pub max_retries: u32,
    /// Entity named in retry events (paper id, node path, ...).
    pub subject: Option<String>,
}

impl CallSpec {
    pub fn new(tag: impl Into<String>, temperature: f64) -> Self {
        Self {
            tag: tag.into(),
            temperature,
            max_output_tokens: 4096,
            max_retries: 3,
            subject: None,
        }
    }

    pub fn max_retries(mut self, n: u32) -> Self {
        self.max_retries = n;
        self
    }

    pub fn max_output_tokens(mut self, n: u32) -> Self {
        self.max_output_tokens = n;
        self
    }

    pub fn subject(mut self, s: impl Into<String>) -> Self {
        self.subject = Some(s.into());
        self
    }
}

impl Gateway {
    /// Builds a prompt from the current error memory, generates, and parses.
    /// Parse failures are recorded in `memory` and the call is regenerated
    /// up to `spec.max_retries` times before failing with `Malformed`.
    pub fn call_structured<T>(
        &self,
        spec: &CallSpec,
        memory: &mut ErrorMemory,
        events: Option<&EventLog>,
        build: impl Fn(&ErrorMemory) -> Result<String>,
        mut parse: impl FnMut(&str) -> std::result::Result<T, String>,
    ) -> Result<T> {
        let total = spec.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 0..total {
            let prompt = build(memory)?;
            let req = CompletionRequest::new(spec.tag.clone(), prompt)
                .temperature(spec.temperature)
                .max_output_tokens(spec.max_output_tokens)
                .attempt(attempt);
            let raw = self.complete(&req)?;
            match parse(&raw) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    tracing::debug!(tag = %spec.tag, attempt, error = %e, "rejected output");
                    if let Some(log) = events {
                        log.record(&spec.tag, EventKind::Retry, spec.subject.as_deref(), &e);
                    }
                    memory.record(e.clone());
                    last_error = e;
                }
            }
        }
        Err(Error::Malformed {
            attempts: total,
            last_error,
        })
    }
}

/// Locates the JSON value in a model reply: the whole reply, a fenced block,
/// or the first balanced object/array.
pub fn extract_json(text: &str) -> Option<&str> {
    let trimmed = text.trim();
    if trimmed.starts_with('{') || trimmed.starts_with('[') {
        if let Some(end) = balanced_end(trimmed) {
            return Some(&trimmed[..end]);
        }
    }
    if let Some(start) = trimmed.find("```") {
        let after = &trimmed[start + 3..];
        let body_start = after.find('\n').map_or(0, |i| i + 1);
        let body = &after[body_start..];
        if let Some(close) = body.find("```") {
            let inner = body[..close].trim();
            if let Some(end) = balanced_end(inner) {
                return Some(&inner[..end]);
            }
        }
    }
    let start = trimmed.find(['{', '['])?;
    let rest = &trimmed[start..];
    balanced_end(rest).map(|end| &rest[..end])
}

/// Byte offset just past the bracket closing the one at position 0.
fn balanced_end(s: &str) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' | '[' => depth += 1,
            '}' | ']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ if depth == 0 => return None,
            _ => {}
        }
    }
    None
}

/// Extracts and deserializes JSON, returning a message suitable for error memory.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> std::result::Result<T, String> {
    let json = extract_json(text).ok_or_else(|| "reply contained no JSON value".to_string())?;
    serde_json::from_str(json).map_err(|e| format!("reply JSON did not match the schema: {e}"))
}
