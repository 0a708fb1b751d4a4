//! Blocking HTTP transports for OpenAI-compatible chat and embedding APIs.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::backend::{CompletionRequest, EmbeddingBackend, TextBackend, TransportError};
use crate::error::{Error, Result};

fn client(timeout: Duration) -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| Error::Config(format!("cannot build http client: {e}")))
}

fn api_key(var: &str) -> Result<String> {
    std::env::var(var)
        .ok()
        .filter(|k| !k.trim().is_empty())
        .ok_or_else(|| Error::Config(format!("environment variable {var} is not set")))
}

fn post(
    client: &reqwest::blocking::Client,
    url: &str,
    key: &str,
    body: &serde_json::Value,
) -> std::result::Result<String, TransportError> {
    let resp = client
        .post(url)
        .bearer_auth(key)
        .json(body)
        .send()
        .map_err(|e| TransportError::Network(e.to_string()))?;
    let status = resp.status();
    let text = resp
        .text()
        .map_err(|e| TransportError::Network(e.to_string()))?;
    if !status.is_success() {
        return Err(TransportError::Status {
            code: status.as_u16(),
            message: text.chars().take(500).collect(),
        });
    }
    Ok(text)
}

/// Any malformed success body is reported as a 502 so it is retried.
fn bad_body(e: impl std::fmt::Display) -> TransportError {
    TransportError::Status {
        code: 502,
        message: format!("unexpected response body: {e}"),
    }
}

#[derive(Debug)]
pub struct HttpChatBackend {
    base_url: String,
    model: String,
    key: String,
    client: reqwest::blocking::Client,
}

impl HttpChatBackend {
    /// Reads the bearer token from `key_env`.
    pub fn new(base_url: &str, model: &str, key_env: &str, timeout: Duration) -> Result<Self> {
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            key: api_key(key_env)?,
            client: client(timeout)?,
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

impl TextBackend for HttpChatBackend {
    fn generate(&self, req: &CompletionRequest) -> std::result::Result<String, TransportError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        let text = post(
            &self.client,
            &format!("{}/chat/completions", self.base_url),
            &self.key,
            &body,
        )?;
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(bad_body)?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| bad_body("no choices"))
    }

    fn name(&self) -> String {
        format!("chat:{}", self.model)
    }
}

#[derive(Debug)]
pub struct HttpEmbeddingBackend {
    base_url: String,
    model: String,
    key: String,
    client: reqwest::blocking::Client,
}

impl HttpEmbeddingBackend {
    pub fn new(base_url: &str, model: &str, key_env: &str, timeout: Duration) -> Result<Self> {
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            key: api_key(key_env)?,
            client: client(timeout)?,
        })
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: usize,
    embedding: Vec<f64>,
}

impl EmbeddingBackend for HttpEmbeddingBackend {
    fn embed_batch(&self, texts: &[String]) -> std::result::Result<Vec<Vec<f64>>, TransportError> {
        let body = json!({ "model": self.model, "input": texts });
        let text = post(
            &self.client,
            &format!("{}/embeddings", self.base_url),
            &self.key,
            &body,
        )?;
        let mut parsed: EmbeddingResponse = serde_json::from_str(&text).map_err(bad_body)?;
        parsed.data.sort_by_key(|d| d.index);
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }

    fn name(&self) -> String {
        format!("embed:{}", self.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_key_is_a_config_error() {
        let err = HttpChatBackend::new(
            "http://localhost:1",
            "m",
            "SURVEYOR_TEST_UNSET_KEY_VAR",
            Duration::from_secs(1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
