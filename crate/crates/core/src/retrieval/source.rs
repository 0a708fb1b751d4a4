//! Paper-source clients.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{read_json, PaperId, PaperRecord};

/// Read access to a scholarly index.
pub trait PaperSource: Send + Sync {
    fn name(&self) -> String;
    fn search(&self, query: &str, limit: usize) -> Result<Vec<PaperRecord>>;
    /// Papers citing `id`.
    fn citations(&self, id: &PaperId, limit: usize) -> Result<Vec<PaperRecord>>;
    /// Papers cited by `id`.
    fn references(&self, id: &PaperId, limit: usize) -> Result<Vec<PaperRecord>>;
    fn lookup(&self, id: &PaperId) -> Result<Option<PaperRecord>>;
}

/// Lower-cased words of at least three characters.
pub(crate) fn words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() >= 3)
        .map(str::to_lowercase)
        .collect()
}

#[derive(Deserialize)]
struct FixtureFile {
    papers: Vec<PaperRecord>,
}

/// In-memory source over a JSON fixture `{"papers": [...]}`. Citation edges
/// are symmetrized: an entry in one paper's references also counts as a
/// citation of the other paper.
#[derive(Debug, Clone, Default)]
pub struct FixtureSource {
    papers: BTreeMap<PaperId, PaperRecord>,
    cited_by: BTreeMap<PaperId, BTreeSet<PaperId>>,
    cites: BTreeMap<PaperId, BTreeSet<PaperId>>,
}

impl FixtureSource {
    pub fn new(records: Vec<PaperRecord>) -> Self {
        let mut s = Self::default();
        for mut rec in records {
            rec.normalize_citations();
            for r in &rec.out_citations {
                s.cites.entry(rec.id.clone()).or_default().insert(r.clone());
                s.cited_by.entry(r.clone()).or_default().insert(rec.id.clone());
            }
            for c in &rec.in_citations {
                s.cited_by.entry(rec.id.clone()).or_default().insert(c.clone());
                s.cites.entry(c.clone()).or_default().insert(rec.id.clone());
            }
            s.papers.insert(rec.id.clone(), rec);
        }
        s
    }

    /// Loads a fixture file; relative `full_text_ref` paths resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file: FixtureFile = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let records = file
            .papers
            .into_iter()
            .map(|mut r| {
                if let Some(f) = &r.full_text_ref {
                    if Path::new(f).is_relative() {
                        r.full_text_ref = Some(base.join(f).to_string_lossy().into_owned());
                    }
                }
                r
            })
            .collect();
        Ok(Self::new(records))
    }

    pub fn len(&self) -> usize {
        self.papers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.papers.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &PaperRecord> {
        self.papers.values()
    }

    fn collect(&self, ids: Option<&BTreeSet<PaperId>>, limit: usize) -> Vec<PaperRecord> {
        ids.into_iter()
            .flatten()
            .filter_map(|id| self.papers.get(id).cloned())
            .take(limit)
            .collect()
    }
}

impl PaperSource for FixtureSource {
    fn name(&self) -> String {
        "fixture".into()
    }

    fn search(&self, query: &str, limit: usize) -> Result<Vec<PaperRecord>> {
        let q = words(query);
        let mut hits: Vec<(usize, &PaperRecord)> = self
            .papers
            .values()
            .map(|p| (words(&p.embedding_text()).intersection(&q).count(), p))
            .filter(|(score, _)| *score > 0)
            .collect();
        hits.sort_by(|a, b| {
            b.0.cmp(&a.0)
                .then(b.1.citation_count.cmp(&a.1.citation_count))
                .then(a.1.id.cmp(&b.1.id))
        });
        Ok(hits.into_iter().take(limit).map(|(_, p)| p.clone()).collect())
    }

    fn citations(&self, id: &PaperId, limit: usize) -> Result<Vec<PaperRecord>> {
        Ok(self.collect(self.cited_by.get(id), limit))
    }

    fn references(&self, id: &PaperId, limit: usize) -> Result<Vec<PaperRecord>> {
        Ok(self.collect(self.cites.get(id), limit))
    }

    fn lookup(&self, id: &PaperId) -> Result<Option<PaperRecord>> {
        Ok(self.papers.get(id).cloned())
    }
}

/// A source that always fails; stands in for an unreachable service.
#[derive(Debug, Clone, Default)]
pub struct UnavailableSource;

impl PaperSource for UnavailableSource {
    fn name(&self) -> String {
        "unavailable".into()
    }

    fn search(&self, _: &str, _: usize) -> Result<Vec<PaperRecord>> {
        Err(Error::Retrieval("source unavailable".into()))
    }

    fn citations(&self, _: &PaperId, _: usize) -> Result<Vec<PaperRecord>> {
        Err(Error::Retrieval("source unavailable".into()))
    }

    fn references(&self, _: &PaperId, _: usize) -> Result<Vec<PaperRecord>> {
        Err(Error::Retrieval("source unavailable".into()))
    }

    fn lookup(&self, _: &PaperId) -> Result<Option<PaperRecord>> {
        Err(Error::Retrieval("source unavailable".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, title: &str, out: &[&str]) -> PaperRecord {
        let mut r = PaperRecord::new(PaperId::graph(id), title);
        r.out_citations = out.iter().map(|o| PaperId::graph(o)).collect();
        r
    }

    #[test]
    fn edges_are_symmetrized() {
        let s = FixtureSource::new(vec![rec("a", "Alpha", &["b"]), rec("b", "Beta", &[])]);
        let cites_b: Vec<_> = s.citations(&PaperId::graph("b"), 10).unwrap();
        assert_eq!(cites_b[0].id, PaperId::graph("a"));
        let refs_a = s.references(&PaperId::graph("a"), 10).unwrap();
        assert_eq!(refs_a[0].id, PaperId::graph("b"));
    }

    #[test]
    fn search_ranks_by_overlap() {
        let s = FixtureSource::new(vec![
            rec("a", "graph retrieval methods", &[]),
            rec("b", "graph neural retrieval for text", &[]),
            rec("c", "cooking", &[]),
        ]);
        let hits = s.search("graph retrieval text", 10).unwrap();
        let ids: Vec<_> = hits.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, vec!["b", "a"]);
    }
}
