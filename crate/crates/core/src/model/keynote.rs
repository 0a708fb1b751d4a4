use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PaperId;
use crate::error::{Error, Result};

/// Fields every full-text keynote must fill.
pub const MANDATORY_FIELDS: [&str; 6] = [
    "contributions",
    "methodology",
    "experiments",
    "limitations",
    "critical_reflections",
    "tldr",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    FullText,
    AbstractFallback,
    TldrFallback,
}

/// Structured digest of one paper. Section names are open-keyed beyond
/// [`MANDATORY_FIELDS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keynote {
    pub paper_id: PaperId,
    pub sections: BTreeMap<String, String>,
    pub provenance: Provenance,
}

impl Keynote {
    pub fn field(&self, name: &str) -> &str {
        self.sections.get(name).map(String::as_str).unwrap_or("")
    }

    pub fn tldr(&self) -> &str {
        self.field("tldr")
    }

    pub fn missing_mandatory(&self) -> Vec<&'static str> {
        MANDATORY_FIELDS
            .iter()
            .copied()
            .filter(|f| self.field(f).trim().is_empty())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tldr().trim().is_empty() {
            return Err(Error::Integrity(format!(
                "keynote for {} has an empty tldr",
                self.paper_id
            )));
        }
        if self.provenance == Provenance::FullText {
            let missing = self.missing_mandatory();
            if !missing.is_empty() {
                return Err(Error::Integrity(format!(
                    "full-text keynote for {} lacks {}",
                    self.paper_id,
                    missing.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Plain-text rendering used as model context.
    pub fn render(&self, title: &str) -> String {
        let mut out = format!("Paper {} ({title})\n", self.paper_id);
        for name in MANDATORY_FIELDS {
            if let Some(v) = self.sections.get(name) {
                out.push_str(&format!("{name}: {v}\n"));
            }
        }
        for (name, v) in &self.sections {
            if !MANDATORY_FIELDS.contains(&name.as_str()) {
                out.push_str(&format!("{name}: {v}\n"));
            }
        }
        out
    }
}
