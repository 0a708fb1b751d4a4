//! Deterministic in-process backends for tests and offline runs.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use super::backend::{CompletionRequest, EmbeddingBackend, TextBackend, TransportError};

pub type Responder =
    Arc<dyn Fn(&CompletionRequest) -> Result<String, TransportError> + Send + Sync>;

#[derive(Clone)]
pub enum Reply {
    Text(String),
    Status(u16),
    With(Responder),
}

impl Reply {
    pub fn text(s: impl Into<String>) -> Self {
        Reply::Text(s.into())
    }

    fn produce(&self, req: &CompletionRequest) -> Result<String, TransportError> {
        match self {
            Reply::Text(t) => Ok(t.clone()),
            Reply::Status(code) => Err(TransportError::status(*code)),
            Reply::With(f) => f(req),
        }
    }
}

impl std::fmt::Debug for Reply {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Reply::Text(t) => f.debug_tuple("Text").field(t).finish(),
            Reply::Status(c) => f.debug_tuple("Status").field(c).finish(),
            Reply::With(_) => f.write_str("With(..)"),
        }
    }
}

/// Prompt pattern → reply sequence. The last reply repeats unless the rule
/// is marked [`Rule::once`], in which case it stops matching when drained.
#[derive(Debug)]
pub struct Rule {
    tag: Option<String>,
    contains: Vec<String>,
    replies: Mutex<VecDeque<Reply>>,
    once: bool,
}

impl Rule {
    pub fn any() -> Self {
        Self {
            tag: None,
            contains: Vec::new(),
            replies: Mutex::new(VecDeque::new()),
            once: false,
        }
    }

    pub fn tag(tag: impl Into<String>) -> Self {
        Self {
            tag: Some(tag.into()),
            ..Self::any()
        }
    }

    pub fn containing(mut self, needle: impl Into<String>) -> Self {
        self.contains.push(needle.into());
        self
    }

    pub fn reply(self, text: impl Into<String>) -> Self {
        self.replies([Reply::text(text)])
    }

    pub fn reply_status(self, code: u16) -> Self {
        self.replies([Reply::Status(code)])
    }

    pub fn respond_with(
        self,
        f: impl Fn(&CompletionRequest) -> Result<String, TransportError> + Send + Sync + 'static,
    ) -> Self {
        self.replies([Reply::With(Arc::new(f))])
    }

    pub fn replies(self, replies: impl IntoIterator<Item = Reply>) -> Self {
        self.replies
            .lock()
            .expect("rule poisoned")
            .extend(replies);
        self
    }

    pub fn once(mut self) -> Self {
        self.once = true;
        self
    }

    fn matches(&self, req: &CompletionRequest) -> bool {
        self.tag.as_ref().is_none_or(|t| *t == req.tag)
            && self.contains.iter().all(|c| req.prompt.contains(c.as_str()))
    }

    fn take(&self) -> Option<Reply> {
        let mut q = self.replies.lock().expect("rule poisoned");
        if q.len() > 1 || (self.once && q.len() == 1) {
            q.pop_front()
        } else {
            q.front().cloned()
        }
    }
}

/// Scripted text backend: first matching rule answers, else the fallback
/// responder, else status 404. Every request is logged.
#[derive(Default)]
pub struct ScriptedBackend {
    rules: Vec<Rule>,
    fallback: Option<Responder>,
    log: Mutex<Vec<CompletionRequest>>,
    name: Option<String>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_rule(mut self, rule: Rule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn with_fallback(
        mut self,
        f: impl Fn(&CompletionRequest) -> Result<String, TransportError> + Send + Sync + 'static,
    ) -> Self {
        self.fallback = Some(Arc::new(f));
        self
    }

    pub fn with_fallback_responder(mut self, f: Responder) -> Self {
        self.fallback = Some(f);
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn calls(&self) -> Vec<CompletionRequest> {
        self.log.lock().expect("log poisoned").clone()
    }

    pub fn calls_tagged(&self, tag: &str) -> Vec<CompletionRequest> {
        self.calls().into_iter().filter(|r| r.tag == tag).collect()
    }
}

impl TextBackend for ScriptedBackend {
    fn generate(&self, req: &CompletionRequest) -> Result<String, TransportError> {
        self.log.lock().expect("log poisoned").push(req.clone());
        for rule in &self.rules {
            if rule.matches(req) {
                if let Some(reply) = rule.take() {
                    return reply.produce(req);
                }
            }
        }
        match &self.fallback {
            Some(f) => f(req),
            None => Err(TransportError::Status {
                code: 404,
                message: format!("no scripted reply for tag '{}'", req.tag),
            }),
        }
    }

    fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| "scripted".into())
    }
}

/// Feature-hashing bag-of-words embedder. Texts sharing words land close.
#[derive(Debug)]
pub struct HashEmbedder {
    dim: usize,
    calls: AtomicU64,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim: dim.max(2),
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let mut any = false;
        for word in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| w.len() > 2)
        {
            let digest = Sha256::digest(word.to_lowercase().as_bytes());
            let idx = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) as usize
                % self.dim;
            let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[idx] += sign;
            any = true;
        }
        if !any || v.iter().all(|x| *x == 0.0) {
            v[0] = 1.0;
        }
        v
    }
}

impl EmbeddingBackend for HashEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }

    fn name(&self) -> String {
        format!("hash-{}", self.dim)
    }
}

/// Fixed text → vector table; unknown texts fall back to hashing when a
/// fallback dimension is set, else fail with status 404.
#[derive(Debug)]
pub struct TableEmbedder {
    table: HashMap<String, Vec<f64>>,
    fallback: Option<HashEmbedder>,
    calls: AtomicU64,
}

impl TableEmbedder {
    pub fn new(entries: Vec<(String, Vec<f64>)>) -> Self {
        Self {
            table: entries.into_iter().collect(),
            fallback: None,
            calls: AtomicU64::new(0),
        }
    }

    pub fn with_hash_fallback(mut self, dim: usize) -> Self {
        self.fallback = Some(HashEmbedder::new(dim));
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl EmbeddingBackend for TableEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        texts
            .iter()
            .map(|t| match (self.table.get(t), &self.fallback) {
                (Some(v), _) => Ok(v.clone()),
                (None, Some(h)) => Ok(h.vector(t)),
                (None, None) => Err(TransportError::Status {
                    code: 404,
                    message: format!("no embedding for '{t}'"),
                }),
            })
            .collect()
    }

    fn name(&self) -> String {
        "table".into()
    }
}
