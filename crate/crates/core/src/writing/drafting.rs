//! Bottom-up drafting. Each unit sees only its own assigned papers and is
//! verified as a whole; failures are regenerated with error memory.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::json;

use super::citations::CitationResolver;
use super::{WritingConfig, WritingInputs};
use crate::context::Context;
use crate::error::{Error, Result};
use crate::gateway::{parallel_map, CallSpec};
use crate::model::{mark_spans, CitationMark, DraftUnit, ErrorMemory, Granularity, NodePath, OutlineNode, PaperId};
use crate::prompts::{self, tags, Prompt};

/// Words of prose, with citation marks removed.
pub fn count_words(text: &str) -> usize {
    let mut plain = String::with_capacity(text.len());
    let mut last = 0;
    for (range, _) in mark_spans(text) {
        plain.push_str(&text[last..range.start]);
        plain.push(' ');
        last = range.end;
    }
    plain.push_str(&text[last..]);
    plain.split_whitespace().count()
}

/// Depth-one nodes are sections; depth-two nodes are subsections.
pub fn unit_granularity(path: &[String]) -> Granularity {
    if path.len() <= 1 {
        Granularity::Section
    } else {
        Granularity::Subsection
    }
}

struct Floors {
    citations: usize,
    words: usize,
}

/// Checks one generated unit; the error lists every problem found.
fn check_unit(
    raw: &str,
    assigned: &BTreeSet<PaperId>,
    resolver: &CitationResolver,
    cfg: &WritingConfig,
    floors: &Floors,
) -> std::result::Result<(String, Vec<CitationMark>), String> {
    let text = raw.trim().to_string();
    let mut problems = Vec::new();
    if text.is_empty() {
        return Err("the reply was empty".into());
    }
    if text.contains('#') {
        problems.push("the text contains '#'; write plain paragraphs without headings".to_string());
    }
    let verdict = resolver.verify(&text, assigned, cfg.citation_style);
    if !verdict.is_ok() {
        problems.push(format!(
            "these citation keys are not among the allowed keys: {}",
            verdict
                .violations
                .iter()
                .map(|k| format!("<{k}>"))
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    let cited = verdict.cited().len();
    if cited < floors.citations {
        problems.push(format!(
            "cite at least {} different allowed papers; only {cited} were cited",
            floors.citations
        ));
    }
    let words = count_words(&text);
    if words < floors.words {
        problems.push(format!("write at least {} words; the text has {words}", floors.words));
    }
    if problems.is_empty() {
        Ok((text, verdict.marks))
    } else {
        Err(problems.join("; "))
    }
}

#[allow(clippy::too_many_arguments)]
fn generate(
    ctx: &Context,
    prompt: &Prompt,
    path: &NodePath,
    temperature: f64,
    assigned: &BTreeSet<PaperId>,
    resolver: &CitationResolver,
    cfg: &WritingConfig,
    floors: Floors,
) -> Result<DraftUnit> {
    let node = path.join(" / ");
    let spec = CallSpec::new(prompt.tag, temperature)
        .max_retries(cfg.max_citation_retries)
        .subject(node.clone());
    let mut memory = ErrorMemory::new();
    let outcome = ctx.ask(prompt, &spec, &mut memory, |raw| {
        check_unit(raw, assigned, resolver, cfg, &floors)
    });
    match outcome {
        Ok((text, citations)) => Ok(DraftUnit {
            node_path: path.clone(),
            text,
            citations,
            granularity: unit_granularity(path),
        }),
        Err(Error::Malformed { last_error, attempts }) => Err(Error::Drafting {
            node,
            message: format!("{last_error} (after {attempts} attempts)"),
        }),
        Err(e) => Err(e),
    }
}

fn allowed_keys(assigned: &BTreeSet<PaperId>, resolver: &CitationResolver, cfg: &WritingConfig) -> Vec<String> {
    assigned.iter().map(|id| resolver.key_for(id, cfg.citation_style)).collect()
}

fn digests(inputs: &WritingInputs<'_>, assigned: &BTreeSet<PaperId>, resolver: &CitationResolver, cfg: &WritingConfig) -> String {
    assigned
        .iter()
        .map(|id| {
            format!(
                "{}citation key: <{}>\n",
                inputs.digest(id),
                resolver.key_for(id, cfg.citation_style)
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn node_at<'a>(outline: &'a OutlineNode, path: &NodePath) -> Result<&'a OutlineNode> {
    if path.is_empty() {
        return Err(Error::Precondition("drafting needs a section or subsection path".into()));
    }
    outline
        .find(path)
        .ok_or_else(|| Error::NotFound(format!("outline node '{}'", path.join(" / "))))
}

/// Drafts the full text of a leaf node from its assigned papers and the
/// analyses of clusters they belong to.
pub fn draft_subsection(
    ctx: &Context,
    inputs: &WritingInputs<'_>,
    outline: &OutlineNode,
    path: &NodePath,
    resolver: &CitationResolver,
    cfg: &WritingConfig,
) -> Result<DraftUnit> {
    let node = node_at(outline, path)?;
    if !node.is_leaf() {
        return Err(Error::Precondition(format!("'{}' is not a leaf", path.join(" / "))));
    }
    let assigned = &node.assigned_papers;
    if assigned.is_empty() {
        return Err(Error::Precondition(format!(
            "no papers are assigned to '{}'",
            path.join(" / ")
        )));
    }
    let floors = Floors {
        citations: cfg.subsection_least_citations.min(assigned.len()),
        words: cfg.subsection_least_words,
    };
    let mut evidence = vec![digests(inputs, assigned, resolver, cfg)];
    for a in inputs.analyses {
        let related = inputs
            .clusters
            .iter()
            .find(|c| c.cluster_id == a.cluster_id)
            .is_some_and(|c| !c.members.is_disjoint(assigned));
        if related {
            evidence.push(a.render());
        }
    }
    if let Some(code) = inputs.code_overview.filter(|c| !c.code_report.trim().is_empty()) {
        evidence.push(format!("Implementation overview\n{}", code.code_report));
    }
    let prompt = Prompt::new(
        tags::DRAFT_SUBSECTION,
        prompts::DRAFT_SUBSECTION,
        json!({
            "topic": inputs.topic,
            "outline": outline.render(),
            "node": { "path": path, "title": node.title, "description": node.description },
            "allowed_keys": allowed_keys(assigned, resolver, cfg),
            "min_citations": floors.citations,
            "min_words": floors.words,
        }),
    )
    .with_evidence(evidence.join("\n"));
    generate(ctx, &prompt, path, cfg.subsection_temperature, assigned, resolver, cfg, floors)
}

/// Drafts the opening passage of a section whose subsections are all in
/// `drafted`.
pub fn draft_section(
    ctx: &Context,
    inputs: &WritingInputs<'_>,
    outline: &OutlineNode,
    path: &NodePath,
    drafted: &BTreeMap<NodePath, DraftUnit>,
    resolver: &CitationResolver,
    cfg: &WritingConfig,
) -> Result<DraftUnit> {
    let node = node_at(outline, path)?;
    if node.is_leaf() {
        return Err(Error::Precondition(format!(
            "'{}' has no subsections; draft it as a leaf",
            path.join(" / ")
        )));
    }
    let mut children = Vec::new();
    let mut child_text = Vec::new();
    for c in &node.children {
        let cp: NodePath = path.iter().cloned().chain([c.title.clone()]).collect();
        let d = drafted.get(&cp).ok_or_else(|| {
            Error::Precondition(format!("subsection '{}' has not been drafted", cp.join(" / ")))
        })?;
        children.push(json!({ "title": c.title, "description": c.description }));
        child_text.push(format!("Subsection: {}\n{}\n", c.title, d.text));
    }
    let assigned = node.assigned_union();
    if assigned.is_empty() {
        return Err(Error::Precondition(format!(
            "no papers are assigned under '{}'",
            path.join(" / ")
        )));
    }
    let floors = Floors {
        citations: cfg.section_least_citations.min(assigned.len()),
        words: cfg.section_least_words,
    };
    let evidence = format!(
        "{}\n{}",
        child_text.join("\n"),
        digests(inputs, &assigned, resolver, cfg)
    );
    let prompt = Prompt::new(
        tags::DRAFT_SECTION,
        prompts::DRAFT_SECTION,
        json!({
            "topic": inputs.topic,
            "outline": outline.render(),
            "node": { "path": path, "title": node.title, "description": node.description },
            "subsections": children,
            "allowed_keys": allowed_keys(&assigned, resolver, cfg),
            "min_citations": floors.citations,
            "min_words": floors.words,
        }),
    )
    .with_evidence(evidence);
    generate(ctx, &prompt, path, cfg.section_temperature, &assigned, resolver, cfg, floors)
}

/// Drafts every leaf in parallel, then every section preamble, returning
/// units in outline order.
pub fn draft_all(
    ctx: &Context,
    inputs: &WritingInputs<'_>,
    outline: &OutlineNode,
    resolver: &CitationResolver,
    cfg: &WritingConfig,
) -> Result<Vec<DraftUnit>> {
    let leaves: Vec<NodePath> = outline.leaves().into_iter().map(|(p, _)| p).collect();
    let leaf_units = parallel_map(ctx.workers, &leaves, |p| {
        draft_subsection(ctx, inputs, outline, p, resolver, cfg)
    });
    let mut drafted = BTreeMap::new();
    for u in leaf_units {
        let u = u?;
        drafted.insert(u.node_path.clone(), u);
    }
    let sections: Vec<NodePath> = outline
        .nodes()
        .into_iter()
        .filter(|(_, n)| !n.is_leaf())
        .map(|(p, _)| p)
        .collect();
    let section_units = parallel_map(ctx.workers, &sections, |p| {
        draft_section(ctx, inputs, outline, p, &drafted, resolver, cfg)
    });
    for u in section_units {
        let u = u?;
        drafted.insert(u.node_path.clone(), u);
    }
    Ok(outline
        .nodes()
        .into_iter()
        .filter_map(|(p, _)| drafted.remove(&p))
        .collect())
}
