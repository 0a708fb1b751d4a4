//! The persisted three-level store: papers and keynotes, clusters and their
//! analyses, and the survey-level outline and drafts.
//!
//! On disk the substrate is a directory of pretty-printed JSON files with
//! stable key order:
//!
//! ```text
//! papers.json  clusters.json  analyses.json  outline.json  drafts.json
//! revision_log.json  keynotes/<hash>.json  code_reports/<hash>.json
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Cluster, ClusterAnalysis, DraftUnit, Keynote, LogEvent, OutlineNode, PaperId, PaperRecord};
use crate::error::{Error, Result};

pub const EXT: &str = "json";

/// Per-paper output of repository analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeReport {
    pub paper_id: PaperId,
    pub pseudocode: String,
    pub code_report: String,
    pub environment_report: String,
}

/// Topic-wide integrated code and environment reports.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CodeOverview {
    pub code_report: String,
    pub environment_report: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeSubstrate {
    pub topic: String,
    pub papers: BTreeMap<PaperId, PaperRecord>,
    pub keynotes: BTreeMap<PaperId, Keynote>,
    pub clusters: Vec<Cluster>,
    pub analyses: Vec<ClusterAnalysis>,
    pub inter_cluster: String,
    pub code_reports: BTreeMap<PaperId, CodeReport>,
    pub code_overview: Option<CodeOverview>,
    pub outline: Option<OutlineNode>,
    pub drafts: Vec<DraftUnit>,
    pub revision_log: Vec<LogEvent>,
}

#[derive(Serialize, Deserialize)]
struct PapersFile {
    topic: String,
    papers: Vec<PaperRecord>,
}

#[derive(Serialize, Deserialize)]
struct AnalysesFile {
    cluster_analyses: Vec<ClusterAnalysis>,
    inter_cluster: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    code_overview: Option<CodeOverview>,
}

impl KnowledgeSubstrate {
    pub fn new(topic: impl Into<String>) -> Self {
        Self {
            topic: topic.into(),
            ..Default::default()
        }
    }

    pub fn insert_paper(&mut self, rec: PaperRecord) {
        self.papers.insert(rec.id.clone(), rec);
    }

    pub fn title_of(&self, id: &PaperId) -> Option<&str> {
        self.papers.get(id).map(|p| p.title.as_str())
    }

    /// Checks that every referenced paper id exists in `papers`.
    pub fn check_integrity(&self) -> Result<()> {
        let known = |id: &PaperId, what: &str| -> Result<()> {
            if self.papers.contains_key(id) {
                Ok(())
            } else {
                Err(Error::Integrity(format!(
                    "{what} references unknown paper {id}"
                )))
            }
        };
        for (key, rec) in &self.papers {
            if key != &rec.id {
                return Err(Error::Integrity(format!(
                    "paper stored under {key} carries id {}",
                    rec.id
                )));
            }
            rec.validate()?;
        }
        for (key, k) in &self.keynotes {
            known(key, "keynote")?;
            if key != &k.paper_id {
                return Err(Error::Integrity(format!(
                    "keynote stored under {key} belongs to {}",
                    k.paper_id
                )));
            }
            k.validate()?;
        }
        let mut cluster_ids = BTreeSet::new();
        for c in &self.clusters {
            if !cluster_ids.insert(c.cluster_id) {
                return Err(Error::Integrity(format!(
                    "duplicate cluster id {}",
                    c.cluster_id
                )));
            }
            for m in &c.members {
                known(m, &format!("cluster {}", c.cluster_id))?;
            }
        }
        for a in &self.analyses {
            if !cluster_ids.contains(&a.cluster_id) {
                return Err(Error::Integrity(format!(
                    "analysis for unknown cluster {}",
                    a.cluster_id
                )));
            }
            for id in a.referenced_ids() {
                known(id, &format!("analysis of cluster {}", a.cluster_id))?;
            }
            for e in &a.relation_graph {
                if e.from == e.to {
                    return Err(Error::Integrity(format!(
                        "self-loop relation edge on {}",
                        e.from
                    )));
                }
            }
        }
        for (key, r) in &self.code_reports {
            known(key, "code report")?;
            if key != &r.paper_id {
                return Err(Error::Integrity(format!(
                    "code report stored under {key} belongs to {}",
                    r.paper_id
                )));
            }
        }
        if let Some(outline) = &self.outline {
            outline.validate()?;
            for (path, node) in outline.nodes() {
                for id in &node.assigned_papers {
                    known(id, &format!("outline node '{}'", path.join(" / ")))?;
                }
            }
        }
        for d in &self.drafts {
            d.validate()?;
            for m in &d.citations {
                known(&m.paper, &format!("draft '{}'", d.node_path.join(" / ")))?;
            }
        }
        Ok(())
    }

    /// Writes the substrate under `dir`. Integrity is checked first; a failing
    /// substrate writes nothing.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.check_integrity()?;
        fs::create_dir_all(dir).map_err(|e| persist_err(dir, e))?;

        write_json(
            &dir.join(format!("papers.{EXT}")),
            &PapersFile {
                topic: self.topic.clone(),
                papers: self.papers.values().cloned().collect(),
            },
        )?;
        write_json(&dir.join(format!("clusters.{EXT}")), &self.clusters)?;
        write_json(
            &dir.join(format!("analyses.{EXT}")),
            &AnalysesFile {
                cluster_analyses: self.analyses.clone(),
                inter_cluster: self.inter_cluster.clone(),
                code_overview: self.code_overview.clone(),
            },
        )?;
        write_json(&dir.join(format!("outline.{EXT}")), &self.outline)?;
        write_json(&dir.join(format!("drafts.{EXT}")), &self.drafts)?;
        write_json(&dir.join(format!("revision_log.{EXT}")), &self.revision_log)?;

        write_keyed(&dir.join("keynotes"), self.keynotes.iter())?;
        write_keyed(&dir.join("code_reports"), self.code_reports.iter())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let papers: PapersFile = read_json(&dir.join(format!("papers.{EXT}")))?;
        let clusters: Vec<Cluster> = read_json(&dir.join(format!("clusters.{EXT}")))?;
        let analyses: AnalysesFile = read_json(&dir.join(format!("analyses.{EXT}")))?;
        let outline: Option<OutlineNode> = read_json(&dir.join(format!("outline.{EXT}")))?;
        let drafts: Vec<DraftUnit> = read_json(&dir.join(format!("drafts.{EXT}")))?;
        let revision_log: Vec<LogEvent> = read_json(&dir.join(format!("revision_log.{EXT}")))?;

        let keynotes: Vec<Keynote> = read_keyed(&dir.join("keynotes"))?;
        let code_reports: Vec<CodeReport> = read_keyed(&dir.join("code_reports"))?;

        let s = KnowledgeSubstrate {
            topic: papers.topic,
            papers: papers
                .papers
                .into_iter()
                .map(|p| (p.id.clone(), p))
                .collect(),
            keynotes: keynotes
                .into_iter()
                .map(|k| (k.paper_id.clone(), k))
                .collect(),
            clusters,
            analyses: analyses.cluster_analyses,
            inter_cluster: analyses.inter_cluster,
            code_reports: code_reports
                .into_iter()
                .map(|r| (r.paper_id.clone(), r))
                .collect(),
            code_overview: analyses.code_overview,
            outline,
            drafts,
            revision_log,
        };
        s.check_integrity()?;
        Ok(s)
    }
}

fn persist_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Persistence {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes through a temporary sibling and renames into place.
pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| persist_err(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| persist_err(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| persist_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| persist_err(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_keyed<'a, T: Serialize + 'a>(
    dir: &Path,
    items: impl Iterator<Item = (&'a PaperId, &'a T)>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| persist_err(dir, e))?;
    let mut wanted = BTreeSet::new();
    for (id, item) in items {
        let path = dir.join(format!("{}.{EXT}", id.file_key()));
        write_json(&path, item)?;
        wanted.insert(path);
    }
    // drop artifacts of papers no longer present
    for entry in fs::read_dir(dir).map_err(|e| persist_err(dir, e))? {
        let path = entry.map_err(|e| persist_err(dir, e))?.path();
        if path.extension().is_some_and(|e| e == EXT) && !wanted.contains(&path) {
            fs::remove_file(&path).map_err(|e| persist_err(&path, e))?;
        }
    }
    Ok(())
}

fn read_keyed<T: DeserializeOwned>(dir: &Path) -> Result<Vec<T>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Load {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == EXT))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_json(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CitationMark, CitationStyle, Granularity, Provenance};

    pub(crate) fn sample() -> KnowledgeSubstrate {
        let p1 = PaperId::preprint("2406.10252");
        let p2 = PaperId::graph("74fdf80");
        let mut s = KnowledgeSubstrate::new("automated surveys");
        s.insert_paper(PaperRecord::new(p1.clone(), "AutoSurvey").with_abstract("abs"));
        let mut r2 = PaperRecord::new(p2.clone(), "Other Paper");
        r2.out_citations = vec![p1.clone()];
        s.insert_paper(r2);
        for id in [&p1, &p2] {
            let mut sections = BTreeMap::new();
            sections.insert("tldr".into(), format!("tldr of {id}"));
            s.keynotes.insert(
                id.clone(),
                Keynote {
                    paper_id: id.clone(),
                    sections,
                    provenance: Provenance::AbstractFallback,
                },
            );
        }
        s.clusters.push(Cluster {
            cluster_id: 1,
            name: "Pipelines".into(),
            summary: "pipeline systems".into(),
            members: [p1.clone(), p2.clone()].into_iter().collect(),
        });
        s.analyses.push(ClusterAnalysis::empty(1));
        let mut sub = OutlineNode::new("Pipelines", "pipeline systems");
        sub.assigned_papers.insert(p1.clone());
        s.outline = Some(
            OutlineNode::new("Survey", "root").with_children(vec![
                OutlineNode::new("Methods", "methods").with_children(vec![sub]),
            ]),
        );
        s.drafts.push(DraftUnit {
            node_path: vec!["Methods".into(), "Pipelines".into()],
            text: "See <AutoSurvey>.".into(),
            citations: vec![CitationMark {
                style: CitationStyle::TitleMark,
                key: "AutoSurvey".into(),
                paper: p1,
            }],
            granularity: Granularity::Subsection,
        });
        s
    }

    #[test]
    fn save_writes_layout_and_round_trips() {
        let s = sample();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        for f in ["papers", "clusters", "analyses", "outline", "drafts", "revision_log"] {
            assert!(dir.path().join(format!("{f}.json")).is_file(), "{f}");
        }
        assert_eq!(fs::read_dir(dir.path().join("keynotes")).unwrap().count(), 2);
        let loaded = KnowledgeSubstrate::load(dir.path()).unwrap();
        assert_eq!(loaded, s);
    }

    #[test]
    fn dangling_outline_reference_writes_nothing() {
        let mut s = sample();
        s.outline.as_mut().unwrap().children[0].children[0]
            .assigned_papers
            .insert(PaperId::preprint("ghost"));
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("sub");
        assert!(matches!(s.save(&target), Err(Error::Integrity(_))));
        assert!(!target.exists());
        // the same fixture fails the in-memory check
        assert!(s.check_integrity().is_err());
    }

    #[test]
    fn load_of_empty_dir_names_file() {
        let dir = tempfile::tempdir().unwrap();
        match KnowledgeSubstrate::load(dir.path()) {
            Err(Error::Load { path, .. }) => assert!(path.ends_with("papers.json")),
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_keynote_for_unknown_paper() {
        let s = sample();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let ghost = PaperId::preprint("ghost");
        let mut sections = BTreeMap::new();
        sections.insert("tldr".to_string(), "x".to_string());
        let k = Keynote {
            paper_id: ghost.clone(),
            sections,
            provenance: Provenance::TldrFallback,
        };
        write_json(
            &dir.path().join("keynotes").join(format!("{}.json", ghost.file_key())),
            &k,
        )
        .unwrap();
        assert!(matches!(
            KnowledgeSubstrate::load(dir.path()),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn corrupt_file_is_named() {
        let s = sample();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        fs::write(dir.path().join("clusters.json"), "{not json").unwrap();
        match KnowledgeSubstrate::load(dir.path()) {
            Err(Error::Load { path, .. }) => assert!(path.ends_with("clusters.json")),
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn resave_drops_stale_keynotes() {
        let mut s = sample();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let p2 = PaperId::graph("74fdf80");
        s.keynotes.remove(&p2);
        s.save(dir.path()).unwrap();
        assert_eq!(fs::read_dir(dir.path().join("keynotes")).unwrap().count(), 1);
        assert_eq!(KnowledgeSubstrate::load(dir.path()).unwrap(), s);
    }
}
