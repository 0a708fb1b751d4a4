//! Thematic organisation of the evidence set: agent-designed clusters with
//! verified multi-assignment, then per-cluster relation graphs, comparison
//! tables and guided Q&A, and a final cross-cluster synthesis.

mod clusters;
mod intra;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use clusters::{
    assign_papers, design_clusters, verify_and_repair, AssignmentVerdict, ClusterProposal,
    ClusterTheme,
};
pub use intra::{
    analyze_cluster, attributions_from, build_comparison_table, build_relation_graph, guided_qa,
    inter_cluster_analysis, table_to_csv, Evidence, MIN_COLUMNS,
};

use crate::context::Context;
use crate::error::{Error, Result};
use crate::gateway::parallel_map;
use crate::model::{ClusterAnalysis, EventKind, KnowledgeSubstrate, PaperId};

pub(crate) const STAGE: &str = "analysis";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Papers shown to the clustering agent per design call.
    pub design_batch_size: usize,
    pub verify_max_rounds: u32,
    pub n_questions: usize,
    pub retries: u32,
    pub temperature: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            design_batch_size: 20,
            verify_max_rounds: 3,
            n_questions: 1,
            retries: 3,
            temperature: 0.0,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.design_batch_size == 0 {
            return Err(Error::Config("analysis.design_batch_size must be positive".into()));
        }
        if self.verify_max_rounds == 0 {
            return Err(Error::Config("analysis.verify_max_rounds must be at least 1".into()));
        }
        if self.n_questions == 0 {
            return Err(Error::Config("analysis.n_questions must be at least 1".into()));
        }
        Ok(())
    }
}

/// What the clustering agents see of one paper.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaperBrief {
    pub id: PaperId,
    pub title: String,
    pub tldr: String,
}

/// Briefs for every paper in the substrate, preferring keynote digests.
pub fn briefs_of(s: &KnowledgeSubstrate) -> Vec<PaperBrief> {
    s.papers
        .values()
        .map(|p| {
            let tldr = s
                .keynotes
                .get(&p.id)
                .map(|k| k.tldr().to_string())
                .filter(|t| !t.trim().is_empty())
                .unwrap_or_else(|| {
                    if p.tldr.trim().is_empty() {
                        p.abstract_text.clone()
                    } else {
                        p.tldr.clone()
                    }
                });
            PaperBrief {
                id: p.id.clone(),
                title: p.title.clone(),
                tldr,
            }
        })
        .collect()
}

/// Runs the whole stage and stores clusters, analyses and the synthesis in
/// the substrate.
pub fn run_analysis(ctx: &Context, s: &mut KnowledgeSubstrate, cfg: &AnalysisConfig) -> Result<()> {
    cfg.validate()?;
    let briefs = briefs_of(s);
    if briefs.is_empty() {
        return Err(Error::Precondition("no papers to organise".into()));
    }
    let proposal = design_clusters(ctx, &s.topic, &briefs, ClusterProposal::default(), cfg)?;
    let (assigned, verdict) = assign_papers(ctx, &proposal, &briefs, cfg)?;
    tracing::info!(
        clusters = proposal.clusters.len(),
        missing = verdict.missing.len(),
        hallucinated = verdict.hallucinated.len(),
        "initial assignment"
    );
    let clusters = verify_and_repair(ctx, assigned, &proposal, &briefs, cfg)?;

    let ev = Evidence {
        papers: &s.papers,
        keynotes: &s.keynotes,
    };
    let analyses: Vec<ClusterAnalysis> = parallel_map(ctx.workers, &clusters, |c| {
        analyze_cluster(ctx, c, &ev, cfg)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let inter = if clusters.len() >= 2 {
        let known: BTreeSet<PaperId> = s.papers.keys().cloned().collect();
        inter_cluster_analysis(ctx, &clusters, &analyses, &known, cfg)?
    } else {
        ctx.events.record(
            STAGE,
            EventKind::Skip,
            None,
            "inter-cluster synthesis needs at least two clusters",
        );
        String::new()
    };
    s.clusters = clusters;
    s.analyses = analyses;
    s.inter_cluster = inter;
    Ok(())
}

/// Writes one `cluster_<id>.csv` per non-empty comparison table.
pub fn export_tables(analyses: &[ClusterAnalysis], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for a in analyses {
        if a.comparison_table.rows.is_empty() {
            continue;
        }
        let path = dir.join(format!("cluster_{}.csv", a.cluster_id));
        std::fs::write(&path, table_to_csv(&a.comparison_table)?).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
