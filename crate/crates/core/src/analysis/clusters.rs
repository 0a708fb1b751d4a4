//! Theme design, multi-assignment and the verify/repair loop.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AnalysisConfig, PaperBrief, STAGE};
use crate::context::{Context, Monitor};
use crate::error::{Error, Result};
use crate::gateway::{argmax_cosine, parse_json, CallSpec};
use crate::model::{Cluster, ErrorMemory, EventKind, PaperId};
use crate::prompts::{self, tags, Prompt};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterTheme {
    pub name: String,
    pub summary: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterProposal {
    pub clusters: Vec<ClusterTheme>,
}

impl ClusterProposal {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.clusters.is_empty() {
            return Err("the cluster list is empty".into());
        }
        let mut names = BTreeSet::new();
        for c in &self.clusters {
            let name = c.name.trim();
            if name.is_empty() {
                return Err("a cluster has an empty name".into());
            }
            if c.summary.trim().is_empty() {
                return Err(format!("cluster '{name}' has an empty summary"));
            }
            if !names.insert(name.to_lowercase()) {
                return Err(format!("cluster name '{name}' is used more than once"));
            }
        }
        Ok(())
    }
}

/// Defects found when checking assignments against the known paper set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssignmentVerdict {
    pub missing: BTreeSet<PaperId>,
    pub hallucinated: BTreeSet<PaperId>,
}

impl AssignmentVerdict {
    pub fn is_clean(&self) -> bool {
        self.missing.is_empty() && self.hallucinated.is_empty()
    }
}

fn briefs_json(briefs: &[&PaperBrief]) -> Vec<serde_json::Value> {
    briefs
        .iter()
        .map(|b| json!({ "paper_id": b.id.as_str(), "title": b.title, "tldr": b.tldr }))
        .collect()
}

/// Folds paper batches (ordered by id) into a theme list.
pub fn design_clusters(
    ctx: &Context,
    topic: &str,
    briefs: &[PaperBrief],
    prior: ClusterProposal,
    cfg: &AnalysisConfig,
) -> Result<ClusterProposal> {
    let mut sorted: Vec<&PaperBrief> = briefs.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut proposal = prior;
    for (i, batch) in sorted.chunks(cfg.design_batch_size.max(1)).enumerate() {
        let prompt = Prompt::new(
            tags::CLUSTER_DESIGN,
            prompts::CLUSTER_DESIGN,
            json!({
                "topic": topic,
                "prior": proposal.clusters,
                "papers": briefs_json(batch),
            }),
        );
        proposal = ctx.ask(
            &prompt,
            &CallSpec::new(tags::CLUSTER_DESIGN, cfg.temperature)
                .max_retries(cfg.retries)
                .subject(format!("batch {}", i + 1)),
            &mut ErrorMemory::new(),
            |raw| {
                let mut p: ClusterProposal = parse_json(raw)?;
                for c in &mut p.clusters {
                    c.name = c.name.trim().to_string();
                    c.summary = c.summary.trim().to_string();
                }
                p.validate()?;
                Ok(p)
            },
        )?;
    }
    Ok(proposal)
}

#[derive(Deserialize)]
struct Assignments {
    assignments: Vec<Assignment>,
}

#[derive(Deserialize)]
struct Assignment {
    paper_id: String,
    #[serde(default)]
    cluster_ids: Vec<u32>,
}

/// Asks the partitioning agent to place `briefs`. Clusters are numbered from
/// 1 in proposal order. Unknown ids are kept in the members and reported in
/// the verdict; [`verify_and_repair`] strips them.
pub fn assign_papers(
    ctx: &Context,
    proposal: &ClusterProposal,
    briefs: &[PaperBrief],
    cfg: &AnalysisConfig,
) -> Result<(Vec<Cluster>, AssignmentVerdict)> {
    assign_round(ctx, proposal, briefs, cfg, None)
}

/// `round` marks repair calls so each one is a distinct request rather than
/// a cached replay of the previous round.
fn assign_round(
    ctx: &Context,
    proposal: &ClusterProposal,
    briefs: &[PaperBrief],
    cfg: &AnalysisConfig,
    round: Option<u32>,
) -> Result<(Vec<Cluster>, AssignmentVerdict)> {
    let listed: Vec<_> = proposal
        .clusters
        .iter()
        .enumerate()
        .map(|(i, c)| json!({ "cluster_id": i + 1, "name": c.name, "summary": c.summary }))
        .collect();
    let refs: Vec<&PaperBrief> = briefs.iter().collect();
    let mut payload = json!({ "clusters": listed, "papers": briefs_json(&refs) });
    if let Some(r) = round {
        payload["repair_round"] = json!(r);
    }
    let prompt = Prompt::new(tags::CLUSTER_ASSIGN, prompts::CLUSTER_ASSIGN, payload);
    let n = proposal.clusters.len() as u32;
    let parsed = ctx.ask(
        &prompt,
        &CallSpec::new(tags::CLUSTER_ASSIGN, cfg.temperature).max_retries(cfg.retries),
        &mut ErrorMemory::new(),
        |raw| {
            let a: Assignments = parse_json(raw)?;
            for item in &a.assignments {
                if let Some(bad) = item.cluster_ids.iter().find(|c| **c == 0 || **c > n) {
                    return Err(format!(
                        "paper {} assigned to unknown cluster_id {bad}; valid ids are 1..={n}",
                        item.paper_id
                    ));
                }
            }
            Ok(a)
        },
    )?;
    let mut clusters: Vec<Cluster> = proposal
        .clusters
        .iter()
        .enumerate()
        .map(|(i, c)| Cluster {
            cluster_id: i as u32 + 1,
            name: c.name.clone(),
            summary: c.summary.clone(),
            members: BTreeSet::new(),
        })
        .collect();
    let offered: BTreeSet<&PaperId> = briefs.iter().map(|b| &b.id).collect();
    let mut verdict = AssignmentVerdict::default();
    let mut placed = BTreeSet::new();
    for item in parsed.assignments {
        let Ok(id) = PaperId::parse(&item.paper_id) else {
            continue;
        };
        if !offered.contains(&id) {
            verdict.hallucinated.insert(id.clone());
        } else if !item.cluster_ids.is_empty() {
            placed.insert(id.clone());
        }
        for cid in item.cluster_ids {
            clusters[cid as usize - 1].members.insert(id.clone());
        }
    }
    verdict.missing = offered
        .into_iter()
        .filter(|id| !placed.contains(*id))
        .cloned()
        .collect();
    Ok((clusters, verdict))
}

/// Strips unknown members and re-offers missing papers for up to
/// `max_rounds` verification rounds (so at most `max_rounds - 1` repair
/// calls). Papers still missing are attached to the cluster whose summary
/// is most similar to their digest. Empty clusters are dropped.
pub fn verify_and_repair(
    ctx: &Context,
    mut clusters: Vec<Cluster>,
    proposal: &ClusterProposal,
    briefs: &[PaperBrief],
    cfg: &AnalysisConfig,
) -> Result<Vec<Cluster>> {
    if cfg.verify_max_rounds == 0 {
        return Err(Error::InvalidInput("max_rounds must be at least 1".into()));
    }
    let known: BTreeSet<PaperId> = briefs.iter().map(|b| b.id.clone()).collect();
    let mut monitor = Monitor::new(&ctx.events, STAGE, "cluster assignment");
    let mut missing = BTreeSet::new();
    for round in 1..=cfg.verify_max_rounds {
        for c in &mut clusters {
            let unknown: Vec<PaperId> = c.members.difference(&known).cloned().collect();
            for id in unknown {
                monitor.flag(id.as_str(), "assigned paper is not in the evidence set");
                c.members.remove(&id);
            }
        }
        let placed: BTreeSet<&PaperId> = clusters.iter().flat_map(|c| &c.members).collect();
        missing = known.iter().filter(|id| !placed.contains(id)).cloned().collect();
        tracing::debug!(round, missing = missing.len(), "assignment verification");
        if missing.is_empty() || round == cfg.verify_max_rounds {
            break;
        }
        let offer: Vec<PaperBrief> = briefs
            .iter()
            .filter(|b| missing.contains(&b.id))
            .cloned()
            .collect();
        match assign_round(ctx, proposal, &offer, cfg, Some(round)) {
            Ok((repaired, _)) => {
                for (c, r) in clusters.iter_mut().zip(repaired) {
                    c.members.extend(r.members);
                }
            }
            Err(e) => {
                ctx.events
                    .record(STAGE, EventKind::Exhaustion, None, format!("repair call failed: {e}"));
                break;
            }
        }
    }
    if !missing.is_empty() && !clusters.is_empty() {
        attach_by_similarity(ctx, &mut clusters, briefs, &missing)?;
    }
    let before = clusters.len();
    clusters.retain(|c| !c.members.is_empty());
    if clusters.len() < before {
        ctx.events.record(
            STAGE,
            EventKind::Info,
            None,
            format!("dropped {} empty clusters", before - clusters.len()),
        );
    }
    Ok(clusters)
}

fn attach_by_similarity(
    ctx: &Context,
    clusters: &mut [Cluster],
    briefs: &[PaperBrief],
    missing: &BTreeSet<PaperId>,
) -> Result<()> {
    clusters.sort_by_key(|c| c.cluster_id);
    let cluster_texts: Vec<String> = clusters
        .iter()
        .map(|c| format!("{}: {}", c.name, c.summary))
        .collect();
    let cluster_vecs = ctx.gateway.embed(&cluster_texts)?;
    let by_id: BTreeMap<&PaperId, &PaperBrief> = briefs.iter().map(|b| (&b.id, b)).collect();
    for id in missing {
        let b = by_id[id];
        let text = if b.tldr.trim().is_empty() { &b.title } else { &b.tldr };
        let v = ctx.gateway.embed_one(text)?;
        let best = argmax_cosine(&v, &cluster_vecs).expect("clusters non-empty");
        clusters[best].members.insert(id.clone());
        ctx.events.record(
            STAGE,
            EventKind::Fallback,
            Some(id.as_str()),
            format!(
                "unplaced after verification; attached to cluster {} by similarity",
                clusters[best].cluster_id
            ),
        );
    }
    Ok(())
}
