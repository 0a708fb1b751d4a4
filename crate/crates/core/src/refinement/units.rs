//! What one refinement loop edits: a set of drafted nodes rendered as a
//! single headed text, and the strict parse back into units.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::model::{CitationStyle, DraftUnit, Granularity, NodePath, OutlineNode, PaperId};
use crate::writing::CitationResolver;

/// Nodes refined together, in reading order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefineTarget {
    pub granularity: Granularity,
    pub paths: Vec<NodePath>,
}

impl RefineTarget {
    pub fn label(&self) -> String {
        match self.granularity {
            Granularity::Survey => "survey".to_string(),
            _ => self.paths[0].join(" / "),
        }
    }
}

/// Targets of one granularity: every subsection, every section with its
/// subsections, or the whole survey.
pub fn targets(outline: &OutlineNode, granularity: Granularity) -> Vec<RefineTarget> {
    let nodes = outline.nodes();
    match granularity {
        Granularity::Subsection => nodes
            .into_iter()
            .filter(|(p, _)| p.len() == 2)
            .map(|(p, _)| RefineTarget {
                granularity,
                paths: vec![p],
            })
            .collect(),
        Granularity::Section => outline
            .children
            .iter()
            .map(|s| {
                let head = vec![s.title.clone()];
                let mut paths = vec![head.clone()];
                paths.extend(s.children.iter().map(|c| vec![s.title.clone(), c.title.clone()]));
                RefineTarget { granularity, paths }
            })
            .collect(),
        Granularity::Survey => vec![RefineTarget {
            granularity,
            paths: nodes.into_iter().map(|(p, _)| p).collect(),
        }],
    }
}

fn heading(path: &NodePath) -> String {
    format!("{} {}", "#".repeat(path.len() + 1), path.last().map(String::as_str).unwrap_or(""))
}

/// Headed text of the target's units.
pub fn render_units(target: &RefineTarget, drafts: &BTreeMap<NodePath, DraftUnit>) -> Result<String> {
    let mut out = String::new();
    for p in &target.paths {
        let d = drafts
            .get(p)
            .ok_or_else(|| Error::Precondition(format!("'{}' has no draft to refine", p.join(" / "))))?;
        out.push_str(&heading(p));
        out.push_str("\n\n");
        out.push_str(d.text.trim());
        out.push_str("\n\n");
    }
    Ok(out.trim_end().to_string())
}

/// Splits a revised text back into unit bodies. Heading lines must match
/// the target exactly and in order.
pub fn parse_units(text: &str, target: &RefineTarget) -> std::result::Result<Vec<(NodePath, String)>, String> {
    let mut bodies: Vec<(NodePath, Vec<&str>)> = Vec::new();
    let mut expected = target.paths.iter();
    for line in text.lines() {
        if line.trim_start().starts_with('#') {
            let want = expected
                .next()
                .ok_or_else(|| format!("unexpected heading '{}'; keep exactly the original headings", line.trim()))?;
            if line.trim() != heading(want) {
                return Err(format!(
                    "heading '{}' should be '{}'; keep the original headings in order",
                    line.trim(),
                    heading(want)
                ));
            }
            bodies.push((want.clone(), Vec::new()));
        } else if let Some((_, lines)) = bodies.last_mut() {
            lines.push(line);
        } else if !line.trim().is_empty() {
            return Err("text before the first heading; start with the original first heading".into());
        }
    }
    if let Some(missing) = expected.next() {
        return Err(format!("heading '{}' is missing", heading(missing)));
    }
    let mut out = Vec::with_capacity(bodies.len());
    for (p, lines) in bodies {
        let body = lines.join("\n").trim().to_string();
        if body.is_empty() {
            return Err(format!("the body under '{}' is empty", heading(&p)));
        }
        out.push((p, body));
    }
    Ok(out)
}

/// Papers each node may cite: its own assignment for leaves, the union
/// over its subtree for sections.
pub fn allowed_for(outline: &OutlineNode, path: &NodePath) -> BTreeSet<PaperId> {
    outline.find(path).map(OutlineNode::assigned_union).unwrap_or_default()
}

/// Parses and verifies a revision, producing replacement units.
pub fn accept_revision(
    text: &str,
    target: &RefineTarget,
    outline: &OutlineNode,
    drafts: &BTreeMap<NodePath, DraftUnit>,
    resolver: &CitationResolver,
    style: CitationStyle,
) -> std::result::Result<Vec<DraftUnit>, String> {
    let parsed = parse_units(text, target)?;
    let mut units = Vec::with_capacity(parsed.len());
    let mut problems = Vec::new();
    for (path, body) in parsed {
        if body.contains('#') {
            problems.push(format!("'{}' contains '#' inside its body", path.join(" / ")));
        }
        let verdict = resolver.verify(&body, &allowed_for(outline, &path), style);
        if !verdict.is_ok() {
            problems.push(format!(
                "'{}' cites keys outside its allowed papers: {}",
                path.join(" / "),
                verdict
                    .violations
                    .iter()
                    .map(|k| format!("<{k}>"))
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
        }
        let granularity = drafts.get(&path).map_or(Granularity::Subsection, |d| d.granularity);
        units.push(DraftUnit {
            node_path: path,
            text: body,
            citations: verdict.marks,
            granularity,
        });
    }
    if problems.is_empty() {
        Ok(units)
    } else {
        Err(problems.join("; "))
    }
}
