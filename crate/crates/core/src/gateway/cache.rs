//! Three cache tiers:
//!
//! * **api** – raw backend responses keyed by request parameters, on disk
//!   under `<cache_dir>/api` with optional expiry;
//! * **task** – serialized stage results (keynotes and the like) under
//!   `<cache_dir>/task/<namespace>`;
//! * **runtime** – an in-memory map in front of the api tier.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::backend::CompletionRequest;
use crate::model::{read_json, stable_hash, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheTier {
    Api,
    Task,
    Runtime,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub tier: CacheTier,
    pub key: String,
}

impl CacheKey {
    /// Key for a completion; covers every field that changes the response.
    pub fn for_completion(req: &CompletionRequest) -> Self {
        let material = format!(
            "completion\u{1f}{}\u{1f}{}\u{1f}{}\u{1f}{}\u{1f}{}",
            req.tag, req.temperature, req.max_output_tokens, req.attempt, req.prompt
        );
        Self {
            tier: CacheTier::Api,
            key: stable_hash(&material),
        }
    }

    pub fn for_embedding(backend: &str, text: &str) -> Self {
        Self {
            tier: CacheTier::Api,
            key: stable_hash(&format!("embedding\u{1f}{backend}\u{1f}{text}")),
        }
    }

    /// Key for a stage result identified by its inputs.
    pub fn for_task(namespace: &str, identity: &str) -> Self {
        Self {
            tier: CacheTier::Task,
            key: stable_hash(&format!("{namespace}\u{1f}{identity}")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct DiskEntry {
    stored_at: u64,
    value: String,
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Runtime map backed by an optional on-disk api store.
#[derive(Debug, Default)]
pub struct ResponseCache {
    memory: Mutex<HashMap<String, String>>,
    dir: Option<PathBuf>,
    ttl: Option<Duration>,
    /// Per-key locks so concurrent identical requests reach the backend once.
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>, ttl: Option<Duration>) -> Self {
        Self {
            dir: Some(dir.into()),
            ttl,
            ..Self::default()
        }
    }

    fn disk_path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    pub fn get(&self, key: &CacheKey) -> Option<String> {
        if let Some(v) = self.memory.lock().expect("cache poisoned").get(&key.key) {
            return Some(v.clone());
        }
        let path = self.disk_path(&key.key)?;
        let entry: DiskEntry = read_json(&path).ok()?;
        if let Some(ttl) = self.ttl {
            if now_secs().saturating_sub(entry.stored_at) > ttl.as_secs() {
                let _ = fs::remove_file(&path);
                return None;
            }
        }
        self.memory
            .lock()
            .expect("cache poisoned")
            .insert(key.key.clone(), entry.value.clone());
        Some(entry.value)
    }

    pub fn put(&self, key: &CacheKey, value: &str) {
        self.memory
            .lock()
            .expect("cache poisoned")
            .insert(key.key.clone(), value.to_string());
        if let Some(path) = self.disk_path(&key.key) {
            let entry = DiskEntry {
                stored_at: now_secs(),
                value: value.to_string(),
            };
            if let Err(e) = write_json(&path, &entry) {
                tracing::warn!(error = %e, "api cache write failed");
            }
        }
    }

    pub(crate) fn lock_for(&self, key: &CacheKey) -> Arc<Mutex<()>> {
        self.inflight
            .lock()
            .expect("cache poisoned")
            .entry(key.key.clone())
            .or_default()
            .clone()
    }

    pub fn clear(&self) -> std::io::Result<()> {
        self.memory.lock().expect("cache poisoned").clear();
        if let Some(dir) = &self.dir {
            if dir.exists() {
                fs::remove_dir_all(dir)?;
            }
        }
        Ok(())
    }
}

/// Persisted stage results. Without a directory it degrades to memory only.
#[derive(Debug, Default)]
pub struct TaskCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, String>>,
}

impl TaskCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            memory: Mutex::default(),
        }
    }

    fn path(&self, namespace: &str, key: &CacheKey) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(namespace).join(format!("{}.json", key.key)))
    }

    pub fn get<T: DeserializeOwned>(&self, namespace: &str, key: &CacheKey) -> Option<T> {
        let mem_key = format!("{namespace}/{}", key.key);
        if let Some(text) = self.memory.lock().expect("cache poisoned").get(&mem_key) {
            return serde_json::from_str(text).ok();
        }
        read_json(&self.path(namespace, key)?).ok()
    }

    pub fn put<T: Serialize>(&self, namespace: &str, key: &CacheKey, value: &T) {
        let Ok(text) = serde_json::to_string(value) else {
            return;
        };
        self.memory
            .lock()
            .expect("cache poisoned")
            .insert(format!("{namespace}/{}", key.key), text);
        if let Some(path) = self.path(namespace, key) {
            if let Err(e) = write_json(&path, value) {
                tracing::warn!(error = %e, "task cache write failed");
            }
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completion_key_separates_tag_temperature_attempt() {
        let base = CompletionRequest::new("draft", "p");
        let k = CacheKey::for_completion(&base);
        assert_eq!(k, CacheKey::for_completion(&base.clone()));
        assert_ne!(k, CacheKey::for_completion(&CompletionRequest::new("refine", "p")));
        assert_ne!(k, CacheKey::for_completion(&base.clone().temperature(0.7)));
        assert_ne!(k, CacheKey::for_completion(&base.clone().attempt(1)));
    }

    #[test]
    fn disk_cache_survives_new_instance_and_expires() {
        let dir = tempfile::tempdir().unwrap();
        let key = CacheKey::for_completion(&CompletionRequest::new("t", "p"));
        ResponseCache::on_disk(dir.path(), None).put(&key, "v");
        assert_eq!(
            ResponseCache::on_disk(dir.path(), None).get(&key).as_deref(),
            Some("v")
        );
        // rewrite with an old timestamp to force expiry
        let path = dir.path().join(format!("{}.json", key.key));
        write_json(
            &path,
            &DiskEntry {
                stored_at: 0,
                value: "v".into(),
            },
        )
        .unwrap();
        let c = ResponseCache::on_disk(dir.path(), Some(Duration::from_secs(60)));
        assert!(c.get(&key).is_none());
        assert!(!path.exists());
    }

    #[test]
    fn task_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let key = CacheKey::for_task("keynotes", "paper-1");
        TaskCache::on_disk(dir.path()).put("keynotes", &key, &vec![1, 2, 3]);
        let got: Option<Vec<i32>> = TaskCache::on_disk(dir.path()).get("keynotes", &key);
        assert_eq!(got, Some(vec![1, 2, 3]));
    }
}
