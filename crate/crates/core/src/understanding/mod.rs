//! Full-text reading: parsed documents become structured keynotes, with an
//! abstract or TLDR digest when no usable full text exists.

mod pdf;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use pdf::validate_pdf;

use crate::context::Context;
use crate::error::{Error, Result};
use crate::gateway::{estimate_tokens, extract_json, parallel_map, CacheKey, CallSpec};
use crate::model::{
    stable_hash, ErrorMemory, EventKind, Keynote, PaperId, PaperRecord, Provenance,
    MANDATORY_FIELDS,
};
use crate::prompts::{self, tags, Prompt};

const STAGE: &str = "understanding";
/// Bumped whenever keynote prompts change so cached results are not reused.
const KEYNOTE_VERSION: &str = "keynote-v1";
/// Tokens reserved for the evidence header and rounding.
const EVIDENCE_SLACK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnderstandingConfig {
    /// Largest slice of a document sent in one call.
    pub chunk_tokens: usize,
    pub keynote_retries: u32,
    pub temperature: f64,
}

impl Default for UnderstandingConfig {
    fn default() -> Self {
        Self {
            chunk_tokens: 96_000,
            keynote_retries: 3,
            temperature: 0.0,
        }
    }
}

/// Markdown produced by an external PDF parser.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedDocument {
    pub paper_id: PaperId,
    pub markdown: String,
    pub source_path: PathBuf,
}

impl ParsedDocument {
    pub fn new(paper_id: PaperId, markdown: impl Into<String>, source_path: PathBuf) -> Result<Self> {
        let markdown = markdown.into();
        if markdown.trim().is_empty() {
            return Err(Error::InvalidInput(format!(
                "parsed document for {paper_id} is empty"
            )));
        }
        Ok(Self {
            paper_id,
            markdown,
            source_path,
        })
    }

    /// Reads a markdown file, or the first `.md` file (by name) in a directory.
    pub fn load(paper_id: PaperId, path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            let mut mds: Vec<PathBuf> = fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "md"))
                .collect();
            mds.sort();
            mds.into_iter().next().ok_or_else(|| {
                Error::NotFound(format!("no markdown file in {}", path.display()))
            })?
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        Self::new(paper_id, text, file)
    }
}

/// Splits markdown into pieces of at most `max_tokens`: whole top-level
/// sections where possible, fixed windows inside oversized sections.
pub fn chunk_markdown(md: &str, max_tokens: usize) -> Vec<String> {
    let max_tokens = max_tokens.max(1);
    let mut sections: Vec<String> = Vec::new();
    for line in md.split_inclusive('\n') {
        if line.starts_with("# ") || sections.is_empty() {
            sections.push(String::new());
        }
        sections.last_mut().expect("pushed above").push_str(line);
    }
    let window = max_tokens * 4;
    let mut pieces: Vec<String> = Vec::new();
    for s in sections {
        if estimate_tokens(&s) <= max_tokens {
            pieces.push(s);
        } else {
            let chars: Vec<char> = s.chars().collect();
            pieces.extend(chars.chunks(window).map(|c| c.iter().collect::<String>()));
        }
    }
    let mut chunks: Vec<String> = Vec::new();
    for p in pieces {
        match chunks.last_mut() {
            Some(last) if estimate_tokens(last) + estimate_tokens(&p) <= max_tokens => {
                last.push_str(&p)
            }
            _ => chunks.push(p),
        }
    }
    chunks.retain(|c| !c.trim().is_empty());
    chunks
}

fn value_text(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.trim().to_string()),
        Value::Array(items) => Some(
            items
                .iter()
                .filter_map(value_text)
                .filter(|s| !s.is_empty())
                .collect::<Vec<_>>()
                .join("\n"),
        ),
        other => Some(other.to_string()),
    }
}

fn canonical_field(name: &str) -> String {
    let key = name.trim().to_lowercase().replace([' ', '-'], "_");
    match key.as_str() {
        "key_contributions" => "contributions".into(),
        _ => key,
    }
}

/// Parses a keynote object. With `complete`, every mandatory field must be
/// present and non-empty.
pub fn parse_keynote_fields(
    raw: &str,
    complete: bool,
) -> std::result::Result<BTreeMap<String, String>, String> {
    let json = extract_json(raw).ok_or("reply contained no JSON object")?;
    let obj: serde_json::Map<String, Value> =
        serde_json::from_str(json).map_err(|e| format!("keynote is not a JSON object: {e}"))?;
    let mut out = BTreeMap::new();
    for (k, v) in &obj {
        if let Some(text) = value_text(v).filter(|t| !t.is_empty()) {
            out.entry(canonical_field(k)).or_insert(text);
        }
    }
    if complete {
        let missing: Vec<&str> = MANDATORY_FIELDS
            .iter()
            .copied()
            .filter(|f| !out.contains_key(*f))
            .collect();
        if !missing.is_empty() {
            return Err(format!(
                "keynote is missing mandatory fields: {}",
                missing.join(", ")
            ));
        }
    }
    Ok(out)
}

fn overhead(prompt: &Prompt) -> Result<usize> {
    Ok(estimate_tokens(&prompt.render(&ErrorMemory::new(), usize::MAX)?.text))
}

/// Builds a full-text keynote. Documents larger than one call are read in
/// chunks whose notes are merged by a final call. Results are cached by
/// paper id and document content.
pub fn extract_keynote(
    ctx: &Context,
    doc: &ParsedDocument,
    title: &str,
    cfg: &UnderstandingConfig,
) -> Result<Keynote> {
    let key = CacheKey::for_task(
        "keynote",
        &format!(
            "{KEYNOTE_VERSION}\u{1f}{}\u{1f}{}",
            doc.paper_id,
            stable_hash(&doc.markdown)
        ),
    );
    if let Some(k) = ctx.gateway.tasks().get::<Keynote>("keynote", &key) {
        return Ok(k);
    }
    let subject = doc.paper_id.to_string();
    let keynote_err = |e: Error| Error::Keynote {
        paper: subject.clone(),
        message: e.to_string(),
    };
    let spec = |tag: &str| {
        CallSpec::new(tag, cfg.temperature)
            .max_retries(cfg.keynote_retries)
            .subject(subject.clone())
    };
    let base = json!({ "paper_id": doc.paper_id.as_str(), "title": title });
    let single = Prompt::new(tags::KEYNOTE, prompts::KEYNOTE, base.clone());
    let chunk_probe = Prompt::new(
        tags::KEYNOTE_CHUNK,
        prompts::KEYNOTE_CHUNK,
        json!({ "paper_id": doc.paper_id.as_str(), "title": title, "part": 999, "parts": 999 }),
    );
    let budget = ctx.budget();
    let fixed = overhead(&single)?.max(overhead(&chunk_probe)?) + EVIDENCE_SLACK;
    let room = budget.saturating_sub(fixed).min(cfg.chunk_tokens);
    if room < 32 {
        return Err(keynote_err(Error::Budget {
            needed: fixed + 32,
            budget,
        }));
    }

    let sections = if estimate_tokens(&doc.markdown) <= room {
        ctx.ask(
            &single.with_evidence(doc.markdown.clone()),
            &spec(tags::KEYNOTE),
            &mut ErrorMemory::new(),
            |raw| parse_keynote_fields(raw, true),
        )
        .map_err(keynote_err)?
    } else {
        let chunks = chunk_markdown(&doc.markdown, room);
        let mut notes = Vec::with_capacity(chunks.len());
        for (i, chunk) in chunks.iter().enumerate() {
            let prompt = Prompt::new(
                tags::KEYNOTE_CHUNK,
                prompts::KEYNOTE_CHUNK,
                json!({ "paper_id": doc.paper_id.as_str(), "title": title, "part": i + 1, "parts": chunks.len() }),
            )
            .with_evidence(chunk.clone());
            let partial = ctx
                .ask(&prompt, &spec(tags::KEYNOTE_CHUNK), &mut ErrorMemory::new(), |raw| {
                    parse_keynote_fields(raw, false)
                })
                .map_err(keynote_err)?;
            let mut text = format!("Part {} of {}\n", i + 1, chunks.len());
            for (k, v) in partial {
                text.push_str(&format!("{k}: {v}\n"));
            }
            notes.push(text);
        }
        tracing::debug!(paper = %doc.paper_id, parts = chunks.len(), "merging chunk notes");
        let merge = Prompt::new(tags::KEYNOTE_MERGE, prompts::KEYNOTE_MERGE, base)
            .with_evidence(notes.join("\n"));
        ctx.ask(&merge, &spec(tags::KEYNOTE_MERGE), &mut ErrorMemory::new(), |raw| {
            parse_keynote_fields(raw, true)
        })
        .map_err(keynote_err)?
    };
    let keynote = Keynote {
        paper_id: doc.paper_id.clone(),
        sections,
        provenance: Provenance::FullText,
    };
    keynote.validate()?;
    ctx.gateway.tasks().put("keynote", &key, &keynote);
    Ok(keynote)
}

fn first_sentence(text: &str) -> String {
    let t = text.trim();
    match t.find(". ") {
        Some(i) => t[..=i].to_string(),
        None => t.to_string(),
    }
}

/// Digest from metadata alone: the abstract when present, else the TLDR.
/// `None` means the paper has nothing to read and must be skipped.
pub fn fallback_keynote(rec: &PaperRecord) -> Option<Keynote> {
    let abstract_text = rec.abstract_text.trim();
    let tldr = rec.tldr.trim();
    let mut sections = BTreeMap::new();
    let provenance = if !abstract_text.is_empty() {
        sections.insert("abstract".to_string(), abstract_text.to_string());
        let short = if tldr.is_empty() {
            first_sentence(abstract_text)
        } else {
            tldr.to_string()
        };
        sections.insert("tldr".to_string(), short);
        Provenance::AbstractFallback
    } else if !tldr.is_empty() {
        sections.insert("tldr".to_string(), tldr.to_string());
        Provenance::TldrFallback
    } else {
        return None;
    };
    Some(Keynote {
        paper_id: rec.id.clone(),
        sections,
        provenance,
    })
}

fn full_text_keynote(ctx: &Context, rec: &PaperRecord, path: &str, cfg: &UnderstandingConfig) -> Result<Keynote> {
    let path = Path::new(path);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pdf")) {
        let detail = if validate_pdf(path)? {
            "PDF has not been converted to markdown"
        } else {
            "PDF failed validation and was removed"
        };
        return Err(Error::Keynote {
            paper: rec.id.to_string(),
            message: detail.into(),
        });
    }
    let doc = ParsedDocument::load(rec.id.clone(), path)?;
    extract_keynote(ctx, &doc, &rec.title, cfg)
}

/// Every paper ends with exactly one keynote or one skip event.
pub fn run_understanding(
    ctx: &Context,
    papers: &[PaperRecord],
    cfg: &UnderstandingConfig,
) -> BTreeMap<PaperId, Keynote> {
    let results = parallel_map(ctx.workers, papers, |rec| {
        if let Some(path) = &rec.full_text_ref {
            match full_text_keynote(ctx, rec, path, cfg) {
                Ok(k) => return Some(k),
                Err(e) => ctx.events.record(
                    STAGE,
                    EventKind::Fallback,
                    Some(rec.id.as_str()),
                    format!("full text unusable ({e}); using metadata"),
                ),
            }
        }
        let k = fallback_keynote(rec);
        if k.is_none() {
            ctx.events.record(
                STAGE,
                EventKind::Skip,
                Some(rec.id.as_str()),
                "no full text, abstract or tldr",
            );
        }
        k
    });
    results
        .into_iter()
        .flatten()
        .map(|k| (k.paper_id.clone(), k))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{BackendProfile, Gateway, HashEmbedder, Reply, Rule, ScriptedBackend};
    use std::sync::Arc;

    fn full_reply() -> String {
        json!({
            "key_contributions": ["A new index", "A benchmark"],
            "methodology": "Graph walk",
            "experiments": "Three datasets",
            "limitations": "Small scale",
            "critical_reflections": "Assumes clean data",
            "tldr": "Indexes graphs.",
            "assumptions": "Static graphs"
        })
        .to_string()
    }

    fn ctx_with(b: ScriptedBackend, window: usize) -> (Context, Arc<ScriptedBackend>) {
        let b = Arc::new(b);
        let g = Gateway::builder(b.clone(), Arc::new(HashEmbedder::new(8)))
            .profile(BackendProfile {
                context_window: window,
                ..BackendProfile::default()
            })
            .build()
            .unwrap();
        (Context::new(Arc::new(g)), b)
    }

    fn doc(text: &str) -> ParsedDocument {
        ParsedDocument::new(PaperId::preprint("2401.00001"), text, PathBuf::from("x.md")).unwrap()
    }

    #[test]
    fn keynote_from_contribution_alias() {
        let (c, _) = ctx_with(ScriptedBackend::new().with_rule(Rule::any().reply(full_reply())), 100_000);
        let k = extract_keynote(&c, &doc("# Intro\nbody"), "T", &UnderstandingConfig::default()).unwrap();
        assert_eq!(k.provenance, Provenance::FullText);
        assert_eq!(k.field("contributions"), "A new index\nA benchmark");
        assert_eq!(k.field("assumptions"), "Static graphs");
        assert!(k.missing_mandatory().is_empty());
    }

    #[test]
    fn missing_tldr_is_retried() {
        let mut partial: Value = serde_json::from_str(&full_reply()).unwrap();
        partial.as_object_mut().unwrap().remove("tldr");
        let (c, b) = ctx_with(
            ScriptedBackend::new().with_rule(Rule::any().replies([
                Reply::text(partial.to_string()),
                Reply::text(full_reply()),
            ])),
            100_000,
        );
        let k = extract_keynote(&c, &doc("text"), "T", &UnderstandingConfig::default()).unwrap();
        assert_eq!(k.tldr(), "Indexes graphs.");
        assert_eq!(b.calls().len(), 2);
        assert!(b.calls()[1].prompt.contains("tldr"));
    }

    #[test]
    fn long_document_is_chunked_then_merged() {
        let (c, b) = ctx_with(
            ScriptedBackend::new()
                .with_rule(Rule::tag(tags::KEYNOTE_CHUNK).reply("{\"methodology\": \"part\"}"))
                .with_rule(Rule::tag(tags::KEYNOTE_MERGE).reply(full_reply())),
            1_000,
        );
        let body = format!("# A\n{}\n# B\n{}\n", "x ".repeat(1500), "y ".repeat(1500));
        assert!(estimate_tokens(&body) > 1_000);
        let k = extract_keynote(&c, &doc(&body), "T", &UnderstandingConfig::default()).unwrap();
        assert!(b.calls().len() >= 3);
        assert!(b.calls().iter().all(|r| estimate_tokens(&r.prompt) <= 1_000));
        assert!(k.missing_mandatory().is_empty());
    }

    #[test]
    fn cached_keynote_needs_no_calls() {
        let (c, b) = ctx_with(ScriptedBackend::new().with_rule(Rule::any().reply(full_reply())), 100_000);
        let cfg = UnderstandingConfig::default();
        let a = extract_keynote(&c, &doc("same"), "T", &cfg).unwrap();
        let again = extract_keynote(&c, &doc("same"), "T", &cfg).unwrap();
        assert_eq!(a, again);
        assert_eq!(b.calls().len(), 1);
    }

    #[test]
    fn chunks_respect_limit_and_cover_text() {
        let md = format!("pre\n# One\n{}\n# Two\nshort\n", "z".repeat(900));
        let chunks = chunk_markdown(&md, 100);
        assert!(chunks.iter().all(|c| estimate_tokens(c) <= 100));
        assert_eq!(chunks.concat(), md);
    }

    #[test]
    fn fallback_branches() {
        let mut rec = PaperRecord::new(PaperId::graph("g"), "T").with_abstract("First. Second.");
        assert_eq!(fallback_keynote(&rec).unwrap().provenance, Provenance::AbstractFallback);
        assert_eq!(fallback_keynote(&rec).unwrap().tldr(), "First.");
        rec.abstract_text.clear();
        rec.tldr = "short".into();
        assert_eq!(fallback_keynote(&rec).unwrap().provenance, Provenance::TldrFallback);
        rec.tldr.clear();
        assert!(fallback_keynote(&rec).is_none());
    }

    #[test]
    fn stage_gives_each_paper_a_keynote_or_a_skip() {
        let (c, _) = ctx_with(ScriptedBackend::new(), 100_000);
        let with_abs = PaperRecord::new(PaperId::graph("a"), "A").with_abstract("Abs.");
        let empty = PaperRecord::new(PaperId::graph("b"), "B");
        let mut missing_file = PaperRecord::new(PaperId::graph("c"), "C").with_abstract("Abs.");
        missing_file.full_text_ref = Some("/nonexistent/paper.md".into());
        let out = run_understanding(&c, &[with_abs, empty, missing_file], &UnderstandingConfig::default());
        assert_eq!(out.len(), 2);
        let skips = c.events.of_kind(EventKind::Skip);
        assert_eq!(skips.len(), 1);
        assert_eq!(skips[0].subject.as_deref(), Some("b"));
        assert_eq!(c.events.of_kind(EventKind::Fallback).len(), 1);
    }
}
