//! Outline drafting from the cluster structure, refined batch by batch
//! against paper digests.

use std::collections::BTreeSet;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{WritingConfig, WritingInputs};
use crate::context::Context;
use crate::error::{Error, Result};
use crate::gateway::{parse_json, CallSpec};
use crate::model::{ErrorMemory, OutlineNode, PaperId};
use crate::prompts::{self, tags, Prompt};

#[derive(Deserialize)]
struct OutlineReply {
    #[serde(default)]
    title: Option<String>,
    sections: Vec<SectionReply>,
}

#[derive(Deserialize)]
struct SectionReply {
    title: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    subsections: Vec<SubsectionReply>,
}

#[derive(Deserialize)]
struct SubsectionReply {
    title: String,
    #[serde(default)]
    description: String,
}

fn mentions_future(n: &OutlineNode) -> bool {
    n.title.to_lowercase().contains("future")
}

/// Parses an outline reply and checks the structural requirements: valid
/// tree, titles unique across the outline, a conclusion section and a node
/// on future work.
pub fn parse_outline(raw: &str, topic: &str) -> std::result::Result<OutlineNode, String> {
    let reply: OutlineReply = parse_json(raw)?;
    if reply.sections.is_empty() {
        return Err("the outline has no sections".into());
    }
    let sections = reply
        .sections
        .into_iter()
        .map(|s| {
            OutlineNode::new(s.title.trim(), s.description.trim()).with_children(
                s.subsections
                    .into_iter()
                    .map(|c| OutlineNode::new(c.title.trim(), c.description.trim()))
                    .collect(),
            )
        })
        .collect();
    let title = reply
        .title
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .unwrap_or_else(|| topic.to_string());
    let root = OutlineNode::new(title, format!("A survey of {topic}")).with_children(sections);
    root.validate().map_err(|e| e.to_string())?;

    let mut seen = BTreeSet::new();
    for (_, n) in root.nodes() {
        if !seen.insert(n.title.to_lowercase()) {
            return Err(format!("node title '{}' is used twice; every title must be unique", n.title));
        }
    }
    if !root
        .children
        .iter()
        .any(|s| s.title.to_lowercase().contains("conclusion"))
    {
        return Err("the outline must include a top-level section titled 'Conclusion'".into());
    }
    if !root.nodes().iter().any(|(_, n)| mentions_future(n)) {
        return Err("the outline must include a node whose title names future directions".into());
    }
    Ok(root)
}

fn sections_json(root: &OutlineNode) -> Value {
    let sections: Vec<Value> = root
        .children
        .iter()
        .map(|s| {
            let subs: Vec<Value> = s
                .children
                .iter()
                .map(|c| json!({ "title": c.title, "description": c.description }))
                .collect();
            json!({ "title": s.title, "description": s.description, "subsections": subs })
        })
        .collect();
    json!({ "title": root.title, "sections": sections })
}

/// Drafts the outline from clusters and analyses, then refines it against
/// every batch of paper digests in id order.
pub fn draft_outline(ctx: &Context, inputs: &WritingInputs<'_>, cfg: &WritingConfig) -> Result<OutlineNode> {
    if inputs.clusters.is_empty() {
        return Err(Error::Precondition("outline drafting needs clusters".into()));
    }
    if inputs.analyses.is_empty() {
        return Err(Error::Precondition("outline drafting needs cluster analyses".into()));
    }
    let clusters: Vec<Value> = inputs
        .clusters
        .iter()
        .map(|c| {
            json!({
                "cluster_id": c.cluster_id,
                "name": c.name,
                "summary": c.summary,
                "paper_ids": c.members.iter().map(PaperId::as_str).collect::<Vec<_>>(),
            })
        })
        .collect();
    let mut evidence: Vec<String> = inputs.analyses.iter().map(|a| a.render()).collect();
    if !inputs.inter_cluster.trim().is_empty() {
        evidence.push(format!("Cross-cluster synthesis\n{}", inputs.inter_cluster));
    }
    if let Some(code) = inputs.code_overview.filter(|c| !c.code_report.trim().is_empty()) {
        evidence.push(format!("Implementation overview\n{}", code.code_report));
    }
    let spec = CallSpec::new(tags::OUTLINE_DRAFT, cfg.outline_temperature).max_retries(cfg.retries);
    let prompt = Prompt::new(
        tags::OUTLINE_DRAFT,
        prompts::OUTLINE_DRAFT,
        json!({ "topic": inputs.topic, "clusters": clusters }),
    )
    .with_evidence(evidence.join("\n"));
    let mut outline = ctx.ask(&prompt, &spec, &mut ErrorMemory::new(), |raw| {
        parse_outline(raw, inputs.topic)
    })?;

    let ids: Vec<&PaperId> = inputs.keynotes.keys().collect();
    let batches: Vec<&[&PaperId]> = ids.chunks(cfg.keynote_batch_size.max(1)).collect();
    let total = batches.len();
    for (i, batch) in batches.into_iter().enumerate() {
        let digests: Vec<String> = batch.iter().map(|id| inputs.digest(id)).collect();
        let prompt = Prompt::new(
            tags::OUTLINE_REFINE,
            prompts::OUTLINE_REFINE,
            json!({
                "topic": inputs.topic,
                "batch": i + 1,
                "batches": total,
                "outline": sections_json(&outline),
            }),
        )
        .with_evidence(digests.join("\n"));
        let spec = CallSpec::new(tags::OUTLINE_REFINE, cfg.outline_temperature)
            .max_retries(cfg.retries)
            .subject(format!("batch {}", i + 1));
        outline = ctx.ask(&prompt, &spec, &mut ErrorMemory::new(), |raw| {
            parse_outline(raw, inputs.topic)
        })?;
    }
    Ok(outline)
}
