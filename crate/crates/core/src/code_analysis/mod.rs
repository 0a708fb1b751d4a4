//! Optional repository analysis: pseudocode per linked repository, then a
//! topic-wide code report and an environment report.

mod planner;
mod reports;
mod repo;

use serde::{Deserialize, Serialize};

pub use planner::{
    check_trace, parse_plan, run_pseudocode_loop, LoopMemory, PlanStep, PlannerOp, PseudocodeReview,
    PseudocodeRun, TraceStep,
};
pub use repo::{check_relative, is_config_file, repo_name, DirectoryFetcher, RepoFetcher, RepoSnapshot};
pub use reports::{batch_code_report, config_entry, environment_report, NO_CONFIG};

use crate::context::Context;
use crate::error::{Error, Result};
use crate::gateway::parallel_map;
use crate::model::{CodeOverview, CodeReport, EventKind, KnowledgeSubstrate, PaperId};

pub(crate) const STAGE: &str = "code_analysis";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodeAnalysisConfig {
    /// Off unless asked for; most topics gain little from it.
    pub enabled: bool,
    pub max_rounds: u32,
    /// Distinct files read before pseudocode may be created.
    pub min_reads: usize,
    /// Longest run of non-revising rounds after creation.
    pub revise_every: u32,
    pub planner_temperature: f64,
    pub reviewer_temperature: f64,
    pub reviser_temperature: f64,
    pub creator_temperature: f64,
    /// Loop memory is compressed above this many estimated tokens.
    pub memory_threshold: usize,
    pub batch_size: usize,
    pub retries: u32,
    /// Characters of each configuration file passed to the environment report.
    pub config_file_chars: usize,
}

impl Default for CodeAnalysisConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            max_rounds: 10,
            min_reads: 3,
            revise_every: 3,
            planner_temperature: 0.0,
            reviewer_temperature: 0.0,
            reviser_temperature: 0.0,
            creator_temperature: 0.3,
            memory_threshold: 24_000,
            batch_size: 5,
            retries: 3,
            config_file_chars: 8_000,
        }
    }
}

impl CodeAnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 || self.batch_size == 0 || self.revise_every == 0 {
            return Err(Error::Config(
                "code_analysis.max_rounds, batch_size and revise_every must be positive".into(),
            ));
        }
        if self.memory_threshold < 256 {
            return Err(Error::Config("code_analysis.memory_threshold is too small".into()));
        }
        Ok(())
    }
}

/// Fetches each paper's first repository, runs the pseudocode loops in
/// parallel and stores per-paper reports plus the topic overview.
/// Papers whose repository cannot be fetched or analysed are skipped.
pub fn run_code_analysis(
    ctx: &Context,
    s: &mut KnowledgeSubstrate,
    fetcher: &dyn RepoFetcher,
    cfg: &CodeAnalysisConfig,
) -> Result<()> {
    cfg.validate()?;
    let mut repos = Vec::new();
    for p in s.papers.values() {
        let Some(url) = p.repo_urls.first() else {
            continue;
        };
        match fetcher.fetch(url, &p.id) {
            Ok(r) if !r.is_empty() => repos.push(r),
            Ok(_) => ctx.events.record(STAGE, EventKind::Skip, Some(p.id.as_str()), "repository is empty"),
            Err(e) => ctx
                .events
                .record(STAGE, EventKind::Skip, Some(p.id.as_str()), format!("fetch failed: {e}")),
        }
    }
    if repos.is_empty() {
        ctx.events.record(STAGE, EventKind::Skip, None, "no repositories to analyse");
        return Ok(());
    }
    let runs = parallel_map(ctx.workers, &repos, |r| run_pseudocode_loop(ctx, r, cfg));
    let mut done: Vec<(PaperId, String)> = Vec::new();
    for (repo, run) in repos.iter().zip(runs) {
        match run {
            Ok(run) if !run.pseudocode.trim().is_empty() => {
                let review = run
                    .reviews
                    .last()
                    .map(|r| format!("Final review: {}", r.summary()))
                    .unwrap_or_else(|| "Not reviewed.".to_string());
                s.code_reports.insert(
                    repo.paper_id.clone(),
                    CodeReport {
                        paper_id: repo.paper_id.clone(),
                        pseudocode: run.pseudocode.clone(),
                        code_report: format!("{review} Rounds used: {}.", run.rounds),
                        environment_report: config_entry(repo, cfg.config_file_chars).to_string(),
                    },
                );
                done.push((repo.paper_id.clone(), run.pseudocode));
            }
            Ok(_) => ctx.events.record(
                STAGE,
                EventKind::Skip,
                Some(repo.paper_id.as_str()),
                "loop ended without pseudocode",
            ),
            Err(e) => ctx.events.record(
                STAGE,
                EventKind::Skip,
                Some(repo.paper_id.as_str()),
                format!("pseudocode loop failed: {e}"),
            ),
        }
    }
    let code_report = if done.is_empty() {
        String::new()
    } else {
        batch_code_report(ctx, &done, &s.topic, cfg)?
    };
    let env = environment_report(ctx, &repos, cfg)?;
    s.code_overview = Some(CodeOverview {
        code_report,
        environment_report: env,
    });
    Ok(())
}

#[cfg(test)]
mod tests;
