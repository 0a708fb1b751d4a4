//! Citation keys, exact verification, and assignment of papers to outline
//! nodes.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use serde_json::json;

use super::{WritingConfig, STAGE};
use crate::analysis::PaperBrief;
use crate::context::{Context, Monitor};
use crate::error::{Error, Result};
use crate::gateway::{argmax_cosine, cosine, parse_json, CallSpec};
use crate::model::{
    extract_mark_keys, CitationMark, CitationStyle, ErrorMemory, EventKind, NodePath, OutlineNode,
    PaperId,
};
use crate::prompts::{self, tags, Prompt};

/// Whitespace-collapsed, lowercased title used for exact matching.
pub fn normalize_title(title: &str) -> String {
    title
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Outcome of checking one text against its assigned papers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CitationVerdict {
    /// Resolved marks, distinct by key, in first-appearance order.
    pub marks: Vec<CitationMark>,
    /// Keys that did not resolve inside the assigned set.
    pub violations: Vec<String>,
}

impl CitationVerdict {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn cited(&self) -> BTreeSet<PaperId> {
        self.marks.iter().map(|m| m.paper.clone()).collect()
    }
}

/// Maps citation keys to papers under either style.
#[derive(Debug, Clone, Default)]
pub struct CitationResolver {
    titles: BTreeMap<PaperId, String>,
}

impl CitationResolver {
    pub fn new<'a>(papers: impl IntoIterator<Item = (&'a PaperId, &'a str)>) -> Self {
        Self {
            titles: papers
                .into_iter()
                .map(|(id, t)| (id.clone(), t.trim().to_string()))
                .collect(),
        }
    }

    pub fn title(&self, id: &PaperId) -> Option<&str> {
        self.titles.get(id).map(String::as_str)
    }

    /// The key a writer should use for `id`.
    pub fn key_for(&self, id: &PaperId, style: CitationStyle) -> String {
        match style {
            CitationStyle::TitleMark => self.title(id).unwrap_or(id.as_str()).to_string(),
            CitationStyle::IdMark => id.as_str().to_string(),
        }
    }

    /// Resolves `key` within `assigned` only; no fuzzy matching.
    pub fn resolve(&self, key: &str, assigned: &BTreeSet<PaperId>, style: CitationStyle) -> Option<PaperId> {
        match style {
            CitationStyle::IdMark => PaperId::parse(key).ok().filter(|id| assigned.contains(id)),
            CitationStyle::TitleMark => {
                let want = normalize_title(key);
                assigned
                    .iter()
                    .find(|id| self.title(id).is_some_and(|t| normalize_title(t) == want))
                    .cloned()
            }
        }
    }

    pub fn verify(&self, text: &str, assigned: &BTreeSet<PaperId>, style: CitationStyle) -> CitationVerdict {
        let mut v = CitationVerdict::default();
        let mut seen = BTreeSet::new();
        for key in extract_mark_keys(text) {
            if !seen.insert(key.clone()) {
                continue;
            }
            match self.resolve(&key, assigned, style) {
                Some(paper) => v.marks.push(CitationMark { style, key, paper }),
                None => v.violations.push(key),
            }
        }
        v
    }
}

/// Free-standing form of [`CitationResolver::verify`].
pub fn verify_citations(
    text: &str,
    assigned: &BTreeSet<PaperId>,
    style: CitationStyle,
    resolver: &CitationResolver,
) -> CitationVerdict {
    resolver.verify(text, assigned, style)
}

#[derive(Deserialize)]
struct AssignReply {
    assignments: Vec<AssignItem>,
}

#[derive(Deserialize)]
struct AssignItem {
    paper_id: String,
    #[serde(default)]
    sections: Vec<String>,
}

fn node_text(n: &OutlineNode) -> String {
    format!("{}: {}", n.title, n.description)
}

fn brief_text(b: &PaperBrief) -> &str {
    if b.tldr.trim().is_empty() {
        &b.title
    } else {
        &b.tldr
    }
}

/// Assigns every paper to outline nodes and records the result in the
/// outline. Node titles must match exactly (after trimming); mismatches are
/// retried, and papers still unplaced go to the most similar node. Leaves
/// left empty receive their `fallback_top_k` most similar papers.
pub fn assign_citations(
    ctx: &Context,
    outline: &mut OutlineNode,
    briefs: &[PaperBrief],
    cfg: &WritingConfig,
) -> Result<BTreeMap<NodePath, BTreeSet<PaperId>>> {
    outline.validate()?;
    let nodes: Vec<(NodePath, OutlineNode)> = outline
        .nodes()
        .into_iter()
        .map(|(p, n)| (p, n.clone()))
        .collect();
    if nodes.is_empty() {
        return Err(Error::Precondition("outline has no sections".into()));
    }
    let by_title: BTreeMap<&str, &NodePath> = nodes.iter().map(|(p, n)| (n.title.trim(), p)).collect();
    let known: BTreeMap<&PaperId, &PaperBrief> = briefs.iter().map(|b| (&b.id, b)).collect();
    let node_list: Vec<_> = nodes
        .iter()
        .map(|(_, n)| json!({ "title": n.title, "description": n.description }))
        .collect();

    let mut map: BTreeMap<NodePath, BTreeSet<PaperId>> = BTreeMap::new();
    let mut monitor = Monitor::new(&ctx.events, STAGE, "citation assignment");
    let mut sorted: Vec<&PaperBrief> = briefs.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    for batch in sorted.chunks(cfg.keynote_batch_size.max(1)) {
        let mut pending: Vec<&PaperBrief> = batch.to_vec();
        let mut memory = ErrorMemory::new();
        for attempt in 0..=cfg.retries {
            if pending.is_empty() {
                break;
            }
            let papers: Vec<_> = pending
                .iter()
                .map(|b| json!({ "paper_id": b.id.as_str(), "title": b.title, "tldr": b.tldr }))
                .collect();
            let prompt = Prompt::new(
                tags::CITATION_ASSIGN,
                prompts::CITATION_ASSIGN,
                json!({ "nodes": node_list, "papers": papers, "round": attempt + 1 }),
            );
            let reply: AssignReply = ctx.ask(
                &prompt,
                &CallSpec::new(tags::CITATION_ASSIGN, 0.0)
                    .max_retries(cfg.retries)
                    .subject(format!("attempt {}", attempt + 1)),
                &mut memory,
                parse_json,
            )?;
            let mut placed = BTreeSet::new();
            let mut bad_titles = BTreeSet::new();
            for item in reply.assignments {
                let Ok(id) = PaperId::parse(&item.paper_id) else {
                    continue;
                };
                if !known.contains_key(&id) {
                    monitor.flag(id.as_str(), "assigned paper is not in the evidence set");
                    continue;
                }
                for t in &item.sections {
                    match by_title.get(t.trim()) {
                        Some(path) => {
                            map.entry((*path).clone()).or_default().insert(id.clone());
                            placed.insert(id.clone());
                        }
                        None => {
                            bad_titles.insert(t.trim().to_string());
                        }
                    }
                }
            }
            pending.retain(|b| !placed.contains(&b.id));
            if !bad_titles.is_empty() {
                let titles: Vec<_> = bad_titles.into_iter().collect();
                memory.record(format!(
                    "these titles are not in the outline: {}. Copy node titles exactly",
                    titles.join("; ")
                ));
            }
            if !pending.is_empty() {
                let ids: Vec<&str> = pending.iter().map(|b| b.id.as_str()).collect();
                memory.record(format!("papers still without a valid node: {}", ids.join(", ")));
            }
        }
        if !pending.is_empty() {
            let texts: Vec<String> = nodes.iter().map(|(_, n)| node_text(n)).collect();
            let node_vecs = ctx.gateway.embed(&texts)?;
            for b in pending {
                let v = ctx.gateway.embed_one(brief_text(b))?;
                let best = argmax_cosine(&v, &node_vecs).expect("outline has nodes");
                let path = nodes[best].0.clone();
                ctx.events.record(
                    STAGE,
                    EventKind::Fallback,
                    Some(b.id.as_str()),
                    format!("attached to '{}' by similarity", path.join(" / ")),
                );
                map.entry(path).or_default().insert(b.id.clone());
            }
        }
    }

    fill_empty_leaves(ctx, &nodes, briefs, &mut map, cfg.fallback_top_k)?;

    for (path, _) in &nodes {
        if let Some(n) = outline.find_mut(path) {
            n.assigned_papers = map.get(path).cloned().unwrap_or_default();
        }
    }
    Ok(map)
}

fn fill_empty_leaves(
    ctx: &Context,
    nodes: &[(NodePath, OutlineNode)],
    briefs: &[PaperBrief],
    map: &mut BTreeMap<NodePath, BTreeSet<PaperId>>,
    k: usize,
) -> Result<()> {
    let empty: Vec<&(NodePath, OutlineNode)> = nodes
        .iter()
        .filter(|(p, n)| n.is_leaf() && map.get(p).is_none_or(BTreeSet::is_empty))
        .collect();
    if empty.is_empty() || briefs.is_empty() || k == 0 {
        return Ok(());
    }
    let texts: Vec<String> = briefs.iter().map(|b| brief_text(b).to_string()).collect();
    let paper_vecs = ctx.gateway.embed(&texts)?;
    for (path, n) in empty {
        let v = ctx.gateway.embed_one(&node_text(n))?;
        let mut scored: Vec<(f64, &PaperId)> = paper_vecs
            .iter()
            .zip(briefs)
            .map(|(pv, b)| (cosine(&v, pv), &b.id))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        let chosen: BTreeSet<PaperId> = scored.into_iter().take(k).map(|(_, id)| id.clone()).collect();
        ctx.events.record(
            STAGE,
            EventKind::Fallback,
            Some(&path.join(" / ")),
            format!("empty leaf given {} most similar papers", chosen.len()),
        );
        map.insert(path.clone(), chosen);
    }
    Ok(())
}
