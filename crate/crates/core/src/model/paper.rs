use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PaperId;
use crate::error::{Error, Result};

/// One retrieved paper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub id: PaperId,
    pub title: String,
    #[serde(default)]
    pub abstract_text: String,
    #[serde(default)]
    pub tldr: String,
    /// Locator of the parsed full text (a directory or markdown file), if any.
    #[serde(default)]
    pub full_text_ref: Option<String>,
    #[serde(default)]
    pub in_citations: Vec<PaperId>,
    #[serde(default)]
    pub out_citations: Vec<PaperId>,
    #[serde(default)]
    pub repo_urls: Vec<String>,
    #[serde(default)]
    pub citation_count: u64,
    /// authors, year, venue, ...
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl PaperRecord {
    pub fn new(id: PaperId, title: impl Into<String>) -> Self {
        Self {
            id,
            title: title.into(),
            abstract_text: String::new(),
            tldr: String::new(),
            full_text_ref: None,
            in_citations: Vec::new(),
            out_citations: Vec::new(),
            repo_urls: Vec::new(),
            citation_count: 0,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_abstract(mut self, text: impl Into<String>) -> Self {
        self.abstract_text = text.into();
        self
    }

    /// Drops self-references and duplicate citation edges, keeping first occurrence.
    pub fn normalize_citations(&mut self) {
        let own = self.id.clone();
        for list in [&mut self.in_citations, &mut self.out_citations] {
            let mut seen = std::collections::HashSet::new();
            list.retain(|id| *id != own && seen.insert(id.clone()));
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, list) in [("in", &self.in_citations), ("out", &self.out_citations)] {
            let mut seen = std::collections::HashSet::new();
            for id in list {
                if *id == self.id {
                    return Err(Error::Integrity(format!(
                        "paper {} lists itself in its {name}-citations",
                        self.id
                    )));
                }
                if !seen.insert(id) {
                    return Err(Error::Integrity(format!(
                        "paper {} has duplicate {name}-citation {id}",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Title plus abstract, the text used for coarse semantic filtering.
    pub fn embedding_text(&self) -> String {
        if self.abstract_text.is_empty() {
            self.title.clone()
        } else {
            format!("{}\n{}", self.title, self.abstract_text)
        }
    }
}
