//! Joins drafts into one document, numbering references by first
//! appearance, and writes the citation sidecar read by evaluation.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mark_spans, DraftUnit, Keynote, NodePath, OutlineNode, PaperId, PaperRecord};

pub const SURVEY_FILE: &str = "survey.md";
pub const CITATIONS_FILE: &str = "survey.citations.json";

/// Front-matter fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurveyMeta {
    pub topic: String,
    pub generated_at: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BibEntry {
    pub number: usize,
    pub paper_id: PaperId,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub tldr: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledSurvey {
    pub document: String,
    pub bibliography: Vec<BibEntry>,
}

impl AssembledSurvey {
    /// Writes the document and its citation map into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let doc = dir.join(SURVEY_FILE);
        std::fs::write(&doc, &self.document).map_err(|e| Error::io(&doc, e))?;
        let side = dir.join(CITATIONS_FILE);
        let json = serde_json::to_string_pretty(&self.bibliography).expect("bibliography serializes");
        std::fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
        Ok((doc, side))
    }

    pub fn read_citations(path: &Path) -> Result<Vec<BibEntry>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

fn quoted(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

struct Numbering<'a> {
    order: Vec<PaperId>,
    index: HashMap<PaperId, usize>,
    papers: &'a BTreeMap<PaperId, PaperRecord>,
}

impl Numbering<'_> {
    /// Rewrites `<key>` marks of one unit into `[n]`.
    fn rewrite(&mut self, unit: &DraftUnit) -> Result<String> {
        let by_key: HashMap<&str, &PaperId> = unit.citations.iter().map(|m| (m.key.as_str(), &m.paper)).collect();
        let mut out = String::with_capacity(unit.text.len());
        let mut last = 0;
        for (range, key) in mark_spans(&unit.text) {
            let paper = by_key.get(key.as_str()).ok_or_else(|| {
                Error::Integrity(format!(
                    "mark <{key}> in '{}' is not in its citation list",
                    unit.node_path.join(" / ")
                ))
            })?;
            if !self.papers.contains_key(*paper) {
                return Err(Error::Integrity(format!("cited paper {paper} is not in the corpus")));
            }
            let n = match self.index.get(*paper) {
                Some(n) => *n,
                None => {
                    self.order.push((*paper).clone());
                    self.index.insert((*paper).clone(), self.order.len());
                    self.order.len()
                }
            };
            out.push_str(&unit.text[last..range.start]);
            out.push_str(&format!("[{n}]"));
            last = range.end;
        }
        out.push_str(&unit.text[last..]);
        Ok(out)
    }
}

/// Builds the document in outline order. Every section and subsection must
/// have a draft; units for other paths are ignored.
pub fn assemble_survey(
    outline: &OutlineNode,
    drafts: &[DraftUnit],
    papers: &BTreeMap<PaperId, PaperRecord>,
    keynotes: &BTreeMap<PaperId, Keynote>,
    meta: &SurveyMeta,
) -> Result<AssembledSurvey> {
    let by_path: BTreeMap<&NodePath, &DraftUnit> = drafts.iter().map(|d| (&d.node_path, d)).collect();
    let mut numbering = Numbering {
        order: Vec::new(),
        index: HashMap::new(),
        papers,
    };
    let mut doc = format!(
        "---\ntopic: {}\ngenerated_at: {}\nconfig_hash: {}\n---\n\n# {}\n",
        quoted(&meta.topic),
        quoted(&meta.generated_at),
        quoted(&meta.config_hash),
        outline.title.trim()
    );
    for (path, node) in outline.nodes() {
        let unit = by_path
            .get(&path)
            .ok_or_else(|| Error::Assembly(path.join(" / ")))?;
        let hashes = "#".repeat(path.len() + 1);
        doc.push_str(&format!("\n{hashes} {}\n\n", node.title.trim()));
        let body = numbering.rewrite(unit)?;
        doc.push_str(body.trim());
        doc.push('\n');
    }
    doc.push_str("\n## References\n\n");
    let mut bibliography = Vec::with_capacity(numbering.order.len());
    for (i, id) in numbering.order.iter().enumerate() {
        let rec = &papers[id];
        let tldr = keynotes
            .get(id)
            .map(|k| k.tldr().to_string())
            .filter(|t| !t.trim().is_empty())
            .unwrap_or_else(|| rec.tldr.clone());
        doc.push_str(&format!("[{}] {}. {}\n", i + 1, rec.title.trim(), id));
        bibliography.push(BibEntry {
            number: i + 1,
            paper_id: id.clone(),
            title: rec.title.clone(),
            abstract_text: rec.abstract_text.clone(),
            tldr,
        });
    }
    Ok(AssembledSurvey { document: doc, bibliography })
}
