//! Shared handles passed to every stage.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use crate::error::Result;
use crate::gateway::{CallSpec, Gateway};
use crate::model::{ErrorMemory, EventKind, EventLog};
use crate::prompts::Prompt;

#[derive(Debug, Clone)]
pub struct Context {
    pub gateway: Arc<Gateway>,
    pub events: EventLog,
    /// Upper bound on parallel workers inside a stage.
    pub workers: usize,
}

impl Context {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        Self {
            gateway,
            events: EventLog::new(),
            workers: 4,
        }
    }

    pub fn with_workers(mut self, n: usize) -> Self {
        self.workers = n.max(1);
        self
    }

    pub fn with_events(mut self, events: EventLog) -> Self {
        self.events = events;
        self
    }

    /// Prompt budget in estimated tokens.
    pub fn budget(&self) -> usize {
        self.gateway.profile().context_window
    }

    /// Structured call on a rendered [`Prompt`]. Evidence compression is
    /// logged once per call.
    pub fn ask<T>(
        &self,
        prompt: &Prompt,
        spec: &CallSpec,
        memory: &mut ErrorMemory,
        parse: impl FnMut(&str) -> std::result::Result<T, String>,
    ) -> Result<T> {
        let logged = AtomicBool::new(false);
        let budget = self.budget();
        self.gateway.call_structured(
            spec,
            memory,
            Some(&self.events),
            |mem| {
                let c = prompt.render(mem, budget)?;
                if c.was_compressed() && !logged.swap(true, Ordering::SeqCst) {
                    self.events.record(
                        prompt.tag,
                        EventKind::Compression,
                        spec.subject.as_deref(),
                        format!(
                            "evidence cut to {} chars after {} halvings{}",
                            c.aux_kept.chars().count(),
                            c.halvings,
                            if c.truncated { " and truncation" } else { "" }
                        ),
                    );
                }
                Ok(c.text)
            },
            parse,
        )
    }

    /// Free-text call; an empty reply counts as malformed.
    pub fn ask_text(
        &self,
        prompt: &Prompt,
        spec: &CallSpec,
        memory: &mut ErrorMemory,
    ) -> Result<String> {
        self.ask(prompt, spec, memory, |raw| {
            let t = raw.trim();
            if t.is_empty() {
                Err("reply was empty".to_string())
            } else {
                Ok(t.to_string())
            }
        })
    }
}

/// Attribution monitor for one artifact: reports each offending id once.
#[derive(Debug)]
pub struct Monitor<'a> {
    events: &'a EventLog,
    stage: &'a str,
    artifact: String,
    seen: BTreeSet<String>,
}

impl<'a> Monitor<'a> {
    pub fn new(events: &'a EventLog, stage: &'a str, artifact: impl Into<String>) -> Self {
        Self {
            events,
            stage,
            artifact: artifact.into(),
            seen: BTreeSet::new(),
        }
    }

    pub fn flag(&mut self, id: &str, detail: &str) {
        if self.seen.insert(id.to_string()) {
            self.events.record(
                self.stage,
                EventKind::Monitor,
                Some(id),
                format!("{}: {detail}", self.artifact),
            );
        }
    }

    pub fn flagged(&self) -> &BTreeSet<String> {
        &self.seen
    }
}
