//! Uniform access to generation and embedding backends with retry,
//! caching, token estimation and context compression.

mod backend;
mod cache;
mod http;
mod pool;
mod retry;
mod scripted;
mod structured;
mod tokens;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;

pub use backend::{CompletionRequest, EmbeddingBackend, TextBackend, TransportError};
pub use cache::{CacheKey, CacheTier, ResponseCache, TaskCache};
pub use http::{HttpChatBackend, HttpEmbeddingBackend};
pub use pool::parallel_map;
pub use retry::{BackendProfile, RecordingSleeper, Sleeper, ThreadSleeper, DEFAULT_RETRYABLE};
pub use scripted::{HashEmbedder, Reply, Responder, Rule, ScriptedBackend, TableEmbedder};
pub use structured::{extract_json, parse_json, CallSpec};
pub use tokens::{compress_context, estimate_tokens, Compressed};

use crate::error::{Error, Result};

/// Counters exposed for auditing and tests.
#[derive(Debug, Default)]
pub struct GatewayStats {
    transport_calls: AtomicU64,
    embed_calls: AtomicU64,
    cache_hits: AtomicU64,
    per_tag: Mutex<BTreeMap<String, u64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StatsSnapshot {
    pub transport_calls: u64,
    pub embed_calls: u64,
    pub cache_hits: u64,
    pub per_tag: BTreeMap<String, u64>,
}

impl GatewayStats {
    pub fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            transport_calls: self.transport_calls.load(Ordering::SeqCst),
            embed_calls: self.embed_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            per_tag: self.per_tag.lock().expect("stats poisoned").clone(),
        }
    }
}

pub struct Gateway {
    text: Arc<dyn TextBackend>,
    embedder: Arc<dyn EmbeddingBackend>,
    profile: BackendProfile,
    sleeper: Arc<dyn Sleeper>,
    responses: ResponseCache,
    tasks: TaskCache,
    embed_batch_size: usize,
    stats: GatewayStats,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("text", &self.text.name())
            .field("embedder", &self.embedder.name())
            .field("profile", &self.profile)
            .finish()
    }
}

pub struct GatewayBuilder {
    text: Arc<dyn TextBackend>,
    embedder: Arc<dyn EmbeddingBackend>,
    profile: BackendProfile,
    sleeper: Arc<dyn Sleeper>,
    responses: ResponseCache,
    tasks: TaskCache,
    embed_batch_size: usize,
}

impl GatewayBuilder {
    pub fn profile(mut self, profile: BackendProfile) -> Self {
        self.profile = profile;
        self
    }

    pub fn sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn response_cache(mut self, cache: ResponseCache) -> Self {
        self.responses = cache;
        self
    }

    pub fn task_cache(mut self, cache: TaskCache) -> Self {
        self.tasks = cache;
        self
    }

    pub fn embed_batch_size(mut self, n: usize) -> Self {
        self.embed_batch_size = n.max(1);
        self
    }

    pub fn build(self) -> Result<Gateway> {
        self.profile.validate()?;
        Ok(Gateway {
            text: self.text,
            embedder: self.embedder,
            profile: self.profile,
            sleeper: self.sleeper,
            responses: self.responses,
            tasks: self.tasks,
            embed_batch_size: self.embed_batch_size,
            stats: GatewayStats::default(),
        })
    }
}

impl Gateway {
    pub fn builder(
        text: Arc<dyn TextBackend>,
        embedder: Arc<dyn EmbeddingBackend>,
    ) -> GatewayBuilder {
        GatewayBuilder {
            text,
            embedder,
            profile: BackendProfile::default(),
            sleeper: Arc::new(ThreadSleeper),
            responses: ResponseCache::in_memory(),
            tasks: TaskCache::in_memory(),
            embed_batch_size: 32,
        }
    }

    pub fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.stats.snapshot()
    }

    pub fn tasks(&self) -> &TaskCache {
        &self.tasks
    }

    pub fn responses(&self) -> &ResponseCache {
        &self.responses
    }

    pub fn backend_names(&self) -> (String, String) {
        (self.text.name(), self.embedder.name())
    }

    /// Runs `call` under the retry policy. Retryable failures back off with a
    /// doubling delay; anything else fails immediately.
    fn with_retry<T>(
        &self,
        mut call: impl FnMut() -> std::result::Result<T, TransportError>,
    ) -> Result<T> {
        let mut last_status = None;
        for attempt in 1..=self.profile.max_attempts {
            match call() {
                Ok(v) => return Ok(v),
                Err(err) => {
                    let retryable = match err.code() {
                        Some(code) => self.profile.is_retryable(code),
                        None => true,
                    };
                    if !retryable {
                        let TransportError::Status { code, message } = err else {
                            unreachable!("network errors are retryable");
                        };
                        return Err(Error::Backend {
                            status: code,
                            message,
                        });
                    }
                    last_status = err.code();
                    tracing::warn!(attempt, error = %err, "transient backend failure");
                    if attempt < self.profile.max_attempts {
                        self.sleeper.sleep(self.profile.backoff_delay(attempt));
                    }
                }
            }
        }
        Err(Error::Exhausted {
            attempts: self.profile.max_attempts,
            last_status,
        })
    }

    /// Generates text for `req`, consulting the response cache first.
    pub fn complete(&self, req: &CompletionRequest) -> Result<String> {
        req.validate()?;
        let needed = estimate_tokens(&req.prompt);
        if needed > self.profile.context_window {
            return Err(Error::Budget {
                needed,
                budget: self.profile.context_window,
            });
        }
        let key = CacheKey::for_completion(req);
        let lock = self.responses.lock_for(&key);
        let _guard = lock.lock().expect("inflight lock poisoned");
        if let Some(hit) = self.responses.get(&key) {
            self.stats.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        let text = self.with_retry(|| {
            self.stats.transport_calls.fetch_add(1, Ordering::SeqCst);
            *self
                .stats
                .per_tag
                .lock()
                .expect("stats poisoned")
                .entry(req.tag.clone())
                .or_default() += 1;
            self.text.generate(req)
        })?;
        self.responses.put(&key, &text);
        Ok(text)
    }

    /// Unit-normalized embeddings, one per input, cached per text.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Err(Error::InvalidInput("embed needs at least one text".into()));
        }
        let backend = self.embedder.name();
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        let mut missing: Vec<usize> = Vec::new();
        for (i, t) in texts.iter().enumerate() {
            let key = CacheKey::for_embedding(&backend, t);
            match self
                .responses
                .get(&key)
                .and_then(|s| serde_json::from_str::<Vec<f64>>(&s).ok())
            {
                Some(v) => {
                    self.stats.cache_hits.fetch_add(1, Ordering::SeqCst);
                    out[i] = Some(v);
                }
                None => missing.push(i),
            }
        }
        // identical texts within one call are fetched once
        let mut unique: Vec<usize> = Vec::new();
        for &i in &missing {
            if !unique.iter().any(|&j| texts[j] == texts[i]) {
                unique.push(i);
            }
        }
        for chunk in unique.chunks(self.embed_batch_size) {
            let batch: Vec<String> = chunk.iter().map(|&i| texts[i].clone()).collect();
            let vectors = self.with_retry(|| {
                self.stats.embed_calls.fetch_add(1, Ordering::SeqCst);
                self.embedder.embed_batch(&batch)
            })?;
            if vectors.len() != batch.len() {
                return Err(Error::Backend {
                    status: 0,
                    message: format!(
                        "embedding backend returned {} vectors for {} texts",
                        vectors.len(),
                        batch.len()
                    ),
                });
            }
            for (text, v) in batch.iter().zip(vectors) {
                let v = normalize(v)?;
                let key = CacheKey::for_embedding(&backend, text);
                self.responses
                    .put(&key, &serde_json::to_string(&v).expect("vector serializes"));
                for &i in &missing {
                    if &texts[i] == text {
                        out[i] = Some(v.clone());
                    }
                }
            }
        }
        Ok(out
            .into_iter()
            .map(|v| v.expect("every slot filled"))
            .collect())
    }

    pub fn embed_one(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.embed(&[text.to_string()])?.remove(0))
    }
}

fn normalize(v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::Backend {
            status: 0,
            message: "embedding backend returned a zero or non-finite vector".into(),
        });
    }
    Ok(v.into_iter().map(|x| x / norm).collect())
}

/// Dot product; equals cosine similarity for normalized vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the best-scoring candidate; ties go to the lowest index.
pub fn argmax_cosine(query: &[f64], candidates: &[Vec<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let s = cosine(query, c);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    fn gateway(backend: Arc<ScriptedBackend>, sleeper: Arc<RecordingSleeper>) -> Gateway {
        Gateway::builder(backend, Arc::new(HashEmbedder::new(16)))
            .sleeper(sleeper)
            .build()
            .unwrap()
    }

    #[test]
    fn success_on_first_attempt() {
        let b = Arc::new(ScriptedBackend::new().with_rule(Rule::any().reply("ok")));
        let g = gateway(b.clone(), Arc::new(RecordingSleeper::new()));
        assert_eq!(g.complete(&CompletionRequest::new("t", "p")).unwrap(), "ok");
        assert_eq!(b.calls().len(), 1);
    }

    #[test]
    fn retries_transient_status_with_nondecreasing_delays() {
        let b = Arc::new(ScriptedBackend::new().with_rule(Rule::any().replies([
            Reply::Status(503),
            Reply::Status(503),
            Reply::text("done"),
        ])));
        let s = Arc::new(RecordingSleeper::new());
        let g = gateway(b.clone(), s.clone());
        assert_eq!(g.complete(&CompletionRequest::new("t", "p")).unwrap(), "done");
        assert_eq!(b.calls().len(), 3);
        let d = s.delays();
        assert_eq!(d, vec![Duration::from_secs(1), Duration::from_secs(2)]);
    }

    #[test]
    fn non_retryable_fails_immediately() {
        let b = Arc::new(ScriptedBackend::new().with_rule(Rule::any().reply_status(400)));
        let g = gateway(b.clone(), Arc::new(RecordingSleeper::new()));
        let err = g.complete(&CompletionRequest::new("t", "p")).unwrap_err();
        assert!(matches!(err, Error::Backend { status: 400, .. }));
        assert_eq!(b.calls().len(), 1);
    }

    #[test]
    fn exhaustion_after_max_attempts() {
        let b = Arc::new(ScriptedBackend::new().with_rule(Rule::any().reply_status(429)));
        let s = Arc::new(RecordingSleeper::new());
        let g = gateway(b.clone(), s.clone());
        let err = g.complete(&CompletionRequest::new("t", "p")).unwrap_err();
        assert!(matches!(
            err,
            Error::Exhausted {
                attempts: 10,
                last_status: Some(429)
            }
        ));
        assert_eq!(b.calls().len(), 10);
        let d = s.delays();
        assert_eq!(d.len(), 9);
        assert!(d.windows(2).all(|w| w[0] <= w[1]));
        assert!(d.iter().all(|x| x.as_secs_f64() >= 1.0 && x.as_secs_f64() <= 300.0));
    }

    #[test]
    fn identical_requests_hit_cache() {
        let b = Arc::new(ScriptedBackend::new().with_rule(Rule::any().reply("x")));
        let g = gateway(b.clone(), Arc::new(RecordingSleeper::new()));
        let req = CompletionRequest::new("t", "same prompt");
        g.complete(&req).unwrap();
        g.complete(&req).unwrap();
        assert_eq!(b.calls().len(), 1);
        assert_eq!(g.stats().cache_hits, 1);
        // a different stage tag is a different entry
        g.complete(&CompletionRequest::new("u", "same prompt")).unwrap();
        assert_eq!(b.calls().len(), 2);
    }

    #[test]
    fn concurrent_identical_requests_single_flight() {
        let b = Arc::new(ScriptedBackend::new().with_rule(Rule::any().reply("x")));
        let g = Arc::new(gateway(b.clone(), Arc::new(RecordingSleeper::new())));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let g = g.clone();
                s.spawn(move || g.complete(&CompletionRequest::new("t", "p")).unwrap());
            }
        });
        assert_eq!(b.calls().len(), 1);
    }

    #[test]
    fn oversized_prompt_is_rejected() {
        let b = Arc::new(ScriptedBackend::new().with_rule(Rule::any().reply("x")));
        let g = Gateway::builder(b.clone(), Arc::new(HashEmbedder::new(4)))
            .profile(BackendProfile {
                context_window: 2,
                ..BackendProfile::default()
            })
            .build()
            .unwrap();
        let err = g
            .complete(&CompletionRequest::new("t", "twelve chars"))
            .unwrap_err();
        assert!(matches!(err, Error::Budget { needed: 3, budget: 2 }));
        assert!(b.calls().is_empty());
    }

    #[test]
    fn embed_normalizes_and_caches() {
        let emb = Arc::new(TableEmbedder::new(vec![("a".into(), vec![3.0, 4.0])]));
        let g = Gateway::builder(Arc::new(ScriptedBackend::new()), emb.clone())
            .build()
            .unwrap();
        let v = g.embed(&["a".to_string()]).unwrap();
        assert!((v[0][0] - 0.6).abs() < 1e-12 && (v[0][1] - 0.8).abs() < 1e-12);
        g.embed(&["a".to_string()]).unwrap();
        assert_eq!(emb.calls(), 1);
        assert!(matches!(g.embed(&[]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn embed_vectors_have_unit_norm() {
        let g = Gateway::builder(Arc::new(ScriptedBackend::new()), Arc::new(HashEmbedder::new(64)))
            .embed_batch_size(2)
            .build()
            .unwrap();
        let texts: Vec<String> = ["alpha beta", "gamma", "alpha beta", "delta epsilon zeta"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let v = g.embed(&texts).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v[0], v[2]);
        for x in &v {
            let n: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn argmax_ties_prefer_lowest_index() {
        let q = vec![1.0, 0.0];
        let c = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 0.0]];
        assert_eq!(argmax_cosine(&q, &c), Some(1));
    }
}
