//! Append-only record of skill outcomes with a compressed view for prompts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::gateway::estimate_tokens;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEvent {
    pub round: u32,
    pub skill: String,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_delta: Option<f64>,
}

impl MemoryEvent {
    fn line(&self) -> String {
        match self.score_delta {
            Some(d) => format!("[round {}] {}: {} (score change {d:+.2})", self.round, self.skill, self.summary),
            None => format!("[round {}] {}: {}", self.round, self.skill, self.summary),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefinementMemory {
    events: Vec<MemoryEvent>,
    /// Digest of older rounds, rebuilt whenever the full log is too long.
    pub compressed_state: String,
    #[serde(skip)]
    last_scores: Option<BTreeMap<String, f64>>,
}

impl RefinementMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[MemoryEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Appends one event. Rounds never go backwards.
    pub fn push(&mut self, round: u32, skill: &str, summary: impl Into<String>, score_delta: Option<f64>) {
        let last = self.events.last().map_or(0, |e| e.round);
        assert!(round >= last, "memory rounds must be non-decreasing ({round} after {last})");
        self.events.push(MemoryEvent {
            round,
            skill: skill.to_string(),
            summary: summary.into(),
            score_delta,
        });
    }

    /// Records a review. The delta is the change in mean score against the
    /// previous review and is only reported when both used the same
    /// dimensions.
    pub fn record_review(&mut self, round: u32, scores: &BTreeMap<String, f64>, summary: impl Into<String>) -> Option<f64> {
        let mean = |m: &BTreeMap<String, f64>| m.values().sum::<f64>() / m.len() as f64;
        let delta = self
            .last_scores
            .as_ref()
            .filter(|prev| !prev.is_empty() && !scores.is_empty() && prev.keys().eq(scores.keys()))
            .map(|prev| mean(scores) - mean(prev));
        self.last_scores = Some(scores.clone());
        self.push(round, "review", summary, delta);
        delta
    }

    /// Full text of the log.
    pub fn render_full(&self) -> String {
        self.events.iter().map(MemoryEvent::line).collect::<Vec<_>>().join("\n")
    }

    /// Log text within `max_tokens`. When the full log is too long, every
    /// event of the latest round is kept verbatim and older rounds are
    /// folded into `compressed_state`.
    pub fn render(&mut self, max_tokens: usize) -> String {
        let full = self.render_full();
        if estimate_tokens(&full) <= max_tokens {
            return full;
        }
        let latest = self.events.last().map_or(0, |e| e.round);
        let (old, recent): (Vec<&MemoryEvent>, Vec<&MemoryEvent>) =
            self.events.iter().partition(|e| e.round < latest);
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &old {
            *counts.entry(e.skill.as_str()).or_default() += 1;
        }
        let tally = counts
            .iter()
            .map(|(k, v)| format!("{k} x{v}"))
            .collect::<Vec<_>>()
            .join(", ");
        let net: f64 = old.iter().filter_map(|e| e.score_delta).sum();
        let last_review = old
            .iter()
            .rev()
            .find(|e| e.skill == "review")
            .map(|e| format!(" Last earlier review: {}", e.summary))
            .unwrap_or_default();
        let recent_text = recent.iter().map(|e| e.line()).collect::<Vec<_>>().join("\n");
        let mut state = format!(
            "Rounds before {latest}: {} actions ({tally}); net score change {net:+.2}.{last_review}",
            old.len()
        );
        let room = max_tokens.saturating_sub(estimate_tokens(&recent_text) + 1) * 4;
        if state.chars().count() > room {
            state = state.chars().take(room).collect();
        }
        self.compressed_state = state;
        if self.compressed_state.is_empty() {
            recent_text
        } else {
            format!("{}\n{recent_text}", self.compressed_state)
        }
    }

    /// Readable transcript for one refined unit.
    pub fn transcript(&self, label: &str) -> String {
        let mut out = format!("Refinement transcript: {label}\n\n");
        for e in &self.events {
            out.push_str(&e.line());
            out.push('\n');
        }
        out
    }
}
