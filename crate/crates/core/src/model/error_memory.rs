use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Entries kept before the oldest is evicted.
pub const ERROR_MEMORY_CAPACITY: usize = 10;

/// Recent failure messages, deduplicated and bounded, replayed into prompts
/// so the model can avoid repeating a mistake.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorMemory {
    entries: VecDeque<String>,
}

impl ErrorMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `msg` unless already present; evicts oldest-first beyond capacity.
    pub fn record(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        if self.entries.iter().any(|e| *e == msg) {
            return;
        }
        self.entries.push_back(msg);
        while self.entries.len() > ERROR_MEMORY_CAPACITY {
            self.entries.pop_front();
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.entries.iter().any(|e| e.contains(needle))
    }

    /// Prompt preamble listing earlier failures; empty when nothing was recorded.
    pub fn render(&self) -> String {
        if self.entries.is_empty() {
            return String::new();
        }
        let mut out = String::from("Previous attempts failed. Avoid these errors:\n");
        for e in &self.entries {
            out.push_str("- ");
            out.push_str(e);
            out.push('\n');
        }
        out.push('\n');
        out
    }
}
