use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{NodePath, PaperId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CitationStyle {
    /// `<Paper Title>`
    #[default]
    TitleMark,
    /// `<canonical-id>`
    IdMark,
}

/// One in-text citation, `<key>`, together with the paper it resolved to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CitationMark {
    pub style: CitationStyle,
    pub key: String,
    pub paper: PaperId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Subsection,
    Section,
    Survey,
}

impl std::fmt::Display for Granularity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Granularity::Subsection => "subsection",
            Granularity::Section => "section",
            Granularity::Survey => "survey",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftUnit {
    pub node_path: NodePath,
    pub text: String,
    /// Distinct marks in first-appearance order.
    pub citations: Vec<CitationMark>,
    pub granularity: Granularity,
}

fn mark_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<([^<>\s](?:[^<>\n]{0,298}[^<>\s])?)>").expect("valid regex"))
}

/// Raw keys of every `<key>` mark in reading order (duplicates kept).
pub fn extract_mark_keys(text: &str) -> Vec<String> {
    mark_regex()
        .captures_iter(text)
        .map(|c| c[1].trim().to_string())
        .filter(|k| !k.is_empty())
        .collect()
}

/// Byte spans and keys of every mark, for rewriting.
pub fn mark_spans(text: &str) -> Vec<(std::ops::Range<usize>, String)> {
    mark_regex()
        .captures_iter(text)
        .filter_map(|c| {
            let whole = c.get(0)?;
            let key = c[1].trim().to_string();
            (!key.is_empty()).then(|| (whole.range(), key))
        })
        .collect()
}

impl DraftUnit {
    pub fn cited_papers(&self) -> BTreeSet<PaperId> {
        self.citations.iter().map(|m| m.paper.clone()).collect()
    }

    /// Marks in the text and the citation list agree as sets of keys.
    pub fn validate(&self) -> Result<()> {
        let in_text: BTreeSet<String> = extract_mark_keys(&self.text).into_iter().collect();
        let listed: BTreeSet<String> = self.citations.iter().map(|m| m.key.clone()).collect();
        if in_text != listed {
            return Err(Error::Integrity(format!(
                "draft '{}' citation list disagrees with its text",
                self.node_path.join(" / ")
            )));
        }
        Ok(())
    }
}
