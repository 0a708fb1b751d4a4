use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Which identifier system a canonical id was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdSource {
    PreprintArchive,
    AcademicGraph,
}

/// Unified paper identifier shared by every cache and artifact.
///
/// Ordering and equality only consider the canonical string, so the same
/// paper reached through different sources deduplicates.
#[derive(Debug, Clone, Serialize)]
pub struct PaperId {
    canonical: String,
    source: IdSource,
}

/// Accepts either the full `{canonical, source}` form or a bare string, whose
/// source is guessed from its shape.
impl<'de> Deserialize<'de> for PaperId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Bare(String),
            Full { canonical: String, source: IdSource },
        }
        let (canonical, source) = match Repr::deserialize(d)? {
            Repr::Bare(s) => {
                let source = guess_source(&s);
                (s, source)
            }
            Repr::Full { canonical, source } => (canonical, source),
        };
        PaperId::new(canonical, source).map_err(serde::de::Error::custom)
    }
}

/// New-style preprint ids look like `2406.10252` (optionally versioned).
fn guess_source(id: &str) -> IdSource {
    let core = id.trim().split('v').next().unwrap_or("");
    let mut parts = core.split('.');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(a), Some(b), None)
            if a.len() == 4
                && (4..=5).contains(&b.len())
                && a.chars().chain(b.chars()).all(|c| c.is_ascii_digit()) =>
        {
            IdSource::PreprintArchive
        }
        _ => IdSource::AcademicGraph,
    }
}

impl PaperId {
    pub fn new(canonical: impl Into<String>, source: IdSource) -> Result<Self> {
        let canonical = canonical.into().trim().to_string();
        if canonical.is_empty() {
            return Err(Error::InvalidInput("paper id must be non-empty".into()));
        }
        Ok(Self { canonical, source })
    }

    /// Shorthand for tests and fixtures; panics on an empty id.
    pub fn preprint(id: &str) -> Self {
        Self::new(id, IdSource::PreprintArchive).expect("non-empty id")
    }

    pub fn graph(id: &str) -> Self {
        Self::new(id, IdSource::AcademicGraph).expect("non-empty id")
    }

    /// Builds an id from a bare key, guessing its source from the shape.
    pub fn parse(key: &str) -> Result<Self> {
        Self::new(key, guess_source(key))
    }

    pub fn as_str(&self) -> &str {
        &self.canonical
    }

    pub fn source(&self) -> IdSource {
        self.source
    }

    /// Stable file-name key for per-paper artifacts.
    pub fn file_key(&self) -> String {
        stable_hash(&self.canonical)[..32].to_string()
    }
}

impl PartialEq for PaperId {
    fn eq(&self, other: &Self) -> bool {
        self.canonical == other.canonical
    }
}

impl Eq for PaperId {}

impl std::hash::Hash for PaperId {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.canonical.hash(state);
    }
}

impl PartialOrd for PaperId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PaperId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.canonical.cmp(&other.canonical)
    }
}

impl fmt::Display for PaperId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical)
    }
}

/// Picks the preprint-archive id when present, else the academic-graph id.
pub fn unify_paper_id(preprint_id: Option<&str>, graph_id: Option<&str>) -> Result<PaperId> {
    fn nonempty(s: Option<&str>) -> Option<&str> {
        s.map(str::trim).filter(|s| !s.is_empty())
    }
    match (nonempty(preprint_id), nonempty(graph_id)) {
        (Some(p), _) => PaperId::new(p, IdSource::PreprintArchive),
        (None, Some(g)) => PaperId::new(g, IdSource::AcademicGraph),
        (None, None) => Err(Error::InvalidInput(
            "at least one of preprint id or graph id is required".into(),
        )),
    }
}

/// Hex SHA-256 of a string; used for cache keys and artifact names.
pub fn stable_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
