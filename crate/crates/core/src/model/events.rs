use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// A fallback path was taken (alternate source, abstract keynote, embedding attachment).
    Fallback,
    /// A paper was excluded from further processing.
    Skip,
    /// The attribution monitor caught a reference outside the allowed set.
    Monitor,
    /// Context was compressed to fit a budget.
    Compression,
    /// Model output was rejected and regenerated.
    Retry,
    /// A proposed action or revision was rejected.
    Rejection,
    /// An iteration limit was reached.
    Exhaustion,
    /// Relevance note from a filtering judge.
    Relevance,
    /// Refinement skill outcome.
    Skill,
    Info,
}

/// One entry of the append-only run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub stage: String,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    pub detail: String,
}

/// Shared, append-only event sink. Clones share the same buffer.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    inner: Arc<Mutex<Vec<LogEvent>>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_events(events: Vec<LogEvent>) -> Self {
        Self {
            inner: Arc::new(Mutex::new(events)),
        }
    }

    pub fn record(
        &self,
        stage: &str,
        kind: EventKind,
        subject: Option<&str>,
        detail: impl Into<String>,
    ) {
        let event = LogEvent {
            stage: stage.to_string(),
            kind,
            subject: subject.map(str::to_string),
            detail: detail.into(),
        };
        tracing::debug!(stage, ?kind, subject, detail = %event.detail, "event");
        self.inner.lock().expect("event log poisoned").push(event);
    }

    pub fn snapshot(&self) -> Vec<LogEvent> {
        self.inner.lock().expect("event log poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("event log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn of_kind(&self, kind: EventKind) -> Vec<LogEvent> {
        self.snapshot().into_iter().filter(|e| e.kind == kind).collect()
    }
}
