//! Evaluation, inspection and cache maintenance.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use surveyor_core::model::{KnowledgeSubstrate, PaperId};
use surveyor_core::writing::AssembledSurvey;
use surveyor_core::Context;
use surveyor_eval::{evaluate_survey, EvalInput, EvaluationReport, GatewayJudge, GatewayNli};
use tracing::warn;

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::pipeline::{build_gateway, model_backends};

/// The citation map written next to a survey: `<stem>.citations.json`.
pub fn sidecar_path(survey: &Path) -> PathBuf {
    let stem = survey.file_stem().and_then(|s| s.to_str()).unwrap_or("survey");
    survey.with_file_name(format!("{stem}.citations.json"))
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub report: EvaluationReport,
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// Scores a generated survey. The report is written even when some metrics
/// could not be computed; check [`EvaluationReport::is_complete`].
pub fn evaluate(cfg: &PipelineConfig, survey: &Path, out_dir: Option<&Path>, system: &str) -> Result<EvalOutcome> {
    let text = std::fs::read_to_string(survey)
        .map_err(|e| CliError::Evaluation(format!("cannot read survey {}: {e}", survey.display())))?;
    let sidecar = sidecar_path(survey);
    if !sidecar.exists() {
        return Err(CliError::Evaluation(format!(
            "citation sidecar {} is missing; surveys are evaluated together with their citation map",
            sidecar.display()
        )));
    }
    let bibliography = AssembledSurvey::read_citations(&sidecar).map_err(|e| CliError::Evaluation(e.to_string()))?;
    let universe: BTreeSet<PaperId> = match KnowledgeSubstrate::load(&cfg.substrate_dir()) {
        Ok(s) => s.papers.into_keys().collect(),
        Err(e) => {
            warn!(
                "no substrate at {} ({e}); treating the citation map as the paper universe",
                cfg.substrate_dir().display()
            );
            bibliography.iter().map(|b| b.paper_id.clone()).collect()
        }
    };

    let (text_backend, embedder) = model_backends(cfg)?;
    let gateway = build_gateway(cfg, text_backend, embedder, None)?;
    let ctx = Context::new(gateway).with_workers(cfg.evaluation.workers);
    let nli = GatewayNli::new(ctx.clone());
    let judge = GatewayJudge::new(ctx);
    let input = EvalInput {
        system,
        survey: &text,
        bibliography: &bibliography,
        universe: &universe,
    };
    let report = evaluate_survey(&input, &nli, &judge, &cfg.evaluation.into());
    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| survey.parent().unwrap_or(Path::new(".")).to_path_buf());
    let (csv, json) = report.write(&dir).map_err(|e| CliError::Evaluation(e.to_string()))?;
    Ok(EvalOutcome { report, csv, json })
}

/// What `inspect` prints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Inspect {
    Keynote(String),
    Clusters,
    Analysis(Option<u32>),
    Outline,
}

pub fn inspect(substrate_dir: &Path, what: &Inspect) -> Result<String> {
    let s = KnowledgeSubstrate::load(substrate_dir).map_err(|e| {
        CliError::NotFound(format!("no readable substrate at {}: {e}", substrate_dir.display()))
    })?;
    match what {
        Inspect::Keynote(id) => {
            let key = PaperId::parse(id).map_err(|e| CliError::NotFound(format!("{id}: {e}")))?;
            let k = s
                .keynotes
                .get(&key)
                .ok_or_else(|| CliError::NotFound(format!("no keynote for paper {id}")))?;
            Ok(serde_json::to_string_pretty(k).expect("keynote serialises"))
        }
        Inspect::Clusters => {
            if s.clusters.is_empty() {
                return Err(CliError::NotFound("the substrate has no clusters yet".into()));
            }
            let mut out = String::new();
            for c in &s.clusters {
                out.push_str(&format!("[{}] {} ({} papers)\n", c.cluster_id, c.name, c.members.len()));
                for m in &c.members {
                    out.push_str(&format!("    {m}  {}\n", s.title_of(m).unwrap_or("?")));
                }
            }
            Ok(out)
        }
        Inspect::Analysis(cluster) => {
            let picked: Vec<_> = s
                .analyses
                .iter()
                .filter(|a| cluster.is_none_or(|c| a.cluster_id == c))
                .collect();
            if picked.is_empty() {
                return Err(CliError::NotFound(match cluster {
                    Some(c) => format!("no analysis for cluster {c}"),
                    None => "the substrate has no analyses yet".into(),
                }));
            }
            Ok(serde_json::to_string_pretty(&picked).expect("analysis serialises"))
        }
        Inspect::Outline => {
            let outline = s
                .outline
                .as_ref()
                .ok_or_else(|| CliError::NotFound("the substrate has no outline yet".into()))?;
            let mut out = format!("{}\n", outline.title);
            for (path, node) in outline.nodes() {
                let indent = "  ".repeat(path.len());
                out.push_str(&format!("{indent}- {}", node.title));
                if !node.assigned_papers.is_empty() {
                    let ids: Vec<String> = node.assigned_papers.iter().map(|p| p.to_string()).collect();
                    out.push_str(&format!("  [{}]", ids.join(", ")));
                }
                out.push('\n');
            }
            Ok(out)
        }
    }
}

/// Deletes cached responses and task results. Returns whether anything was removed.
pub fn clear_cache(cache_dir: &Path) -> Result<bool> {
    if !cache_dir.exists() {
        return Ok(false);
    }
    std::fs::remove_dir_all(cache_dir).map_err(|e| CliError::io(format!("removing {}", cache_dir.display()), e))?;
    Ok(true)
}
