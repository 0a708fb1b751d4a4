//! Backends, the end-to-end evaluation run and its report files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use surveyor_core::gateway::{parallel_map, parse_json, CallSpec};
use surveyor_core::model::{ErrorMemory, PaperId};
use surveyor_core::prompts::{self, tags, Prompt};
use surveyor_core::writing::BibEntry;
use surveyor_core::Context;

use crate::citation::{
    citation_precision, citation_recall, required_subsets, valid_citation_ratio, Metric, NliVerdictTable,
};
use crate::claims::extract_claims;
use crate::content::{weighted_content_score, ContentScores, DimensionGroup};
use crate::error::{EvalError, Result};

pub const REPORT_CSV: &str = "evaluation.csv";
pub const REPORT_JSON: &str = "evaluation.json";

/// Decides whether premises jointly support a claim.
pub trait NliBackend: Send + Sync {
    fn entails(&self, claim: &str, premises: &[String]) -> Result<bool>;
}

impl<F> NliBackend for F
where
    F: Fn(&str, &[String]) -> Result<bool> + Send + Sync,
{
    fn entails(&self, claim: &str, premises: &[String]) -> Result<bool> {
        self(claim, premises)
    }
}

/// Scores a survey on the dimensions of one group, each from 1 to 10.
pub trait JudgeBackend: Send + Sync {
    fn score(&self, survey: &str, group: DimensionGroup) -> Result<BTreeMap<String, f64>>;
}

impl<F> JudgeBackend for F
where
    F: Fn(&str, DimensionGroup) -> Result<BTreeMap<String, f64>> + Send + Sync,
{
    fn score(&self, survey: &str, group: DimensionGroup) -> Result<BTreeMap<String, f64>> {
        self(survey, group)
    }
}

/// Entailment judge backed by the LLM gateway.
#[derive(Debug, Clone)]
pub struct GatewayNli {
    pub ctx: Context,
    pub temperature: f64,
    pub retries: u32,
}

impl GatewayNli {
    pub fn new(ctx: Context) -> Self {
        Self {
            ctx,
            temperature: 0.0,
            retries: 2,
        }
    }
}

#[derive(Deserialize)]
struct NliReply {
    entailed: bool,
}

impl NliBackend for GatewayNli {
    fn entails(&self, claim: &str, premises: &[String]) -> Result<bool> {
        let prompt = Prompt::new(tags::NLI, prompts::NLI, json!({ "claim": claim, "premises": premises }));
        let spec = CallSpec::new(tags::NLI, self.temperature).max_retries(self.retries);
        let reply: NliReply = self
            .ctx
            .ask(&prompt, &spec, &mut ErrorMemory::new(), parse_json)?;
        Ok(reply.entailed)
    }
}

/// Content judge backed by the LLM gateway. It asks for bare scores with
/// no explanation, which keeps repeated runs stable.
#[derive(Debug, Clone)]
pub struct GatewayJudge {
    pub ctx: Context,
    pub temperature: f64,
    pub retries: u32,
}

impl GatewayJudge {
    pub fn new(ctx: Context) -> Self {
        Self {
            ctx,
            temperature: 0.0,
            retries: 2,
        }
    }
}

#[derive(Deserialize)]
struct JudgeReply {
    scores: BTreeMap<String, f64>,
}

impl JudgeBackend for GatewayJudge {
    fn score(&self, survey: &str, group: DimensionGroup) -> Result<BTreeMap<String, f64>> {
        let dims = group.dimensions();
        let prompt = Prompt::new(
            tags::JUDGE_SCORE,
            prompts::JUDGE_SCORE,
            json!({ "group": group.name(), "dimensions": dims }),
        )
        .with_evidence(survey.to_string());
        let spec = CallSpec::new(tags::JUDGE_SCORE, self.temperature)
            .max_retries(self.retries)
            .subject(group.name());
        let scores = self.ctx.ask(&prompt, &spec, &mut ErrorMemory::new(), |raw| {
            let reply: JudgeReply = parse_json(raw)?;
            dims.iter()
                .map(|d| match reply.scores.get(*d) {
                    Some(v) if v.is_finite() && (1.0..=10.0).contains(v) => Ok((d.to_string(), *v)),
                    Some(v) => Err(format!("score for {d} is {v}; scores run from 1 to 10")),
                    None => Err(format!("missing a score for {d}")),
                })
                .collect::<std::result::Result<BTreeMap<_, _>, String>>()
        })?;
        Ok(scores)
    }
}

/// What the entailment judge reads for each reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PremiseSource {
    #[default]
    Abstract,
    Tldr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub premise: PremiseSource,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            premise: PremiseSource::Abstract,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalInput<'a> {
    pub system: &'a str,
    pub survey: &'a str,
    pub bibliography: &'a [BibEntry],
    pub universe: &'a BTreeSet<PaperId>,
}

/// A metric value or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricCell {
    Value(f64),
    Error(String),
}

impl MetricCell {
    pub fn value(&self) -> Option<f64> {
        match self {
            MetricCell::Value(v) => Some(*v),
            MetricCell::Error(_) => None,
        }
    }

    fn cell(&self) -> String {
        match self {
            MetricCell::Value(v) => format!("{v:.3}"),
            MetricCell::Error(_) => "ERROR".into(),
        }
    }
}

impl From<Result<f64>> for MetricCell {
    fn from(r: Result<f64>) -> Self {
        match r {
            Ok(v) => MetricCell::Value(v),
            Err(e) => MetricCell::Error(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub system: String,
    pub claims: usize,
    pub nli_queries: usize,
    pub citation_recall: MetricCell,
    pub citation_precision: MetricCell,
    pub valid_citation_ratio: MetricCell,
    pub core: MetricCell,
    pub writing: MetricCell,
    pub depth: MetricCell,
    pub total: MetricCell,
    pub sub_scores: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

const COLUMNS: [&str; 9] = [
    "system",
    "claims",
    "citation_recall",
    "citation_precision",
    "valid_citation_ratio",
    "core",
    "writing",
    "depth",
    "total",
];

impl EvaluationReport {
    fn cells(&self) -> [&MetricCell; 7] {
        [
            &self.citation_recall,
            &self.citation_precision,
            &self.valid_citation_ratio,
            &self.core,
            &self.writing,
            &self.depth,
            &self.total,
        ]
    }

    /// True when every metric was computed.
    pub fn is_complete(&self) -> bool {
        self.cells().iter().all(|c| c.value().is_some())
    }

    /// Errors by metric name.
    pub fn errors(&self) -> Vec<(&'static str, &str)> {
        COLUMNS[2..]
            .iter()
            .zip(self.cells())
            .filter_map(|(name, c)| match c {
                MetricCell::Error(e) => Some((*name, e.as_str())),
                MetricCell::Value(_) => None,
            })
            .collect()
    }

    fn row(&self) -> Vec<String> {
        let mut row = vec![self.system.clone(), self.claims.to_string()];
        row.extend(self.cells().iter().map(|c| c.cell()));
        row
    }

    /// Aligned text table for terminals.
    pub fn table(&self) -> String {
        let row = self.row();
        let widths: Vec<usize> = COLUMNS.iter().zip(&row).map(|(h, v)| h.len().max(v.len())).collect();
        let line = |cells: Vec<&str>| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = line(COLUMNS.to_vec());
        out.push('\n');
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
        out
    }

    /// Writes the CSV row and the full JSON report into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|source| EvalError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let csv_path = dir.join(REPORT_CSV);
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| EvalError::Report(e.to_string()))?;
        w.write_record(COLUMNS).map_err(|e| EvalError::Report(e.to_string()))?;
        w.write_record(self.row()).map_err(|e| EvalError::Report(e.to_string()))?;
        w.flush().map_err(|source| EvalError::Io {
            path: csv_path.clone(),
            source,
        })?;
        let json_path = dir.join(REPORT_JSON);
        let text = serde_json::to_string_pretty(self).map_err(|e| EvalError::Report(e.to_string()))?;
        std::fs::write(&json_path, text).map_err(|source| EvalError::Io {
            path: json_path.clone(),
            source,
        })?;
        Ok((csv_path, json_path))
    }
}

fn premise(entry: &BibEntry, source: PremiseSource) -> String {
    let body = match source {
        PremiseSource::Tldr if !entry.tldr.trim().is_empty() => entry.tldr.trim(),
        _ if !entry.abstract_text.trim().is_empty() => entry.abstract_text.trim(),
        _ => entry.tldr.trim(),
    };
    if body.is_empty() {
        entry.title.clone()
    } else {
        format!("{}: {body}", entry.title)
    }
}

fn record(warnings: &mut Vec<String>, m: Result<Metric>) -> MetricCell {
    match m {
        Ok(m) => {
            warnings.extend(m.warning);
            MetricCell::Value(m.value)
        }
        Err(e) => MetricCell::Error(e.to_string()),
    }
}

/// Runs every metric on one survey. Backend failures leave error markers
/// on the affected metrics; the rest are still reported.
pub fn evaluate_survey(
    input: &EvalInput<'_>,
    nli: &dyn NliBackend,
    judge: &dyn JudgeBackend,
    cfg: &EvalConfig,
) -> EvaluationReport {
    let by_number: BTreeMap<usize, &BibEntry> = input.bibliography.iter().map(|b| (b.number, b)).collect();
    let known: BTreeSet<usize> = by_number.keys().copied().collect();
    let claims = extract_claims(input.survey, &known);
    let queries: Vec<(usize, &str, BTreeSet<usize>)> = claims
        .iter()
        .flat_map(|c| required_subsets(c).into_iter().map(|s| (c.claim_id, c.text.as_str(), s)))
        .collect();
    let answers = parallel_map(cfg.workers, &queries, |(_, claim, subset)| {
        let premises: Vec<String> = subset.iter().map(|n| premise(by_number[n], cfg.premise)).collect();
        nli.entails(claim, &premises)
    });
    let mut table = NliVerdictTable::new();
    let mut warnings = Vec::new();
    for ((id, _, subset), answer) in queries.iter().zip(answers) {
        match answer {
            Ok(v) => table.insert(*id, subset.iter().copied(), v),
            Err(e) => tracing::warn!(claim = id, error = %e, "entailment query failed"),
        }
    }
    let citation_recall = record(&mut warnings, citation_recall(&claims, &table));
    let citation_precision = record(&mut warnings, citation_precision(&claims, &table));
    let tally = valid_citation_ratio(input.survey, input.bibliography, input.universe);
    let valid_citation_ratio = record(&mut warnings, Ok(tally.ratio));

    let mut sub_scores = BTreeMap::new();
    let mut groups: BTreeMap<DimensionGroup, MetricCell> = BTreeMap::new();
    for g in DimensionGroup::ALL {
        let cell = judge.score(input.survey, g).and_then(|scores| {
            let mean = g
                .dimensions()
                .iter()
                .map(|d| {
                    scores
                        .get(*d)
                        .copied()
                        .filter(|v| v.is_finite() && (1.0..=10.0).contains(v))
                        .ok_or_else(|| EvalError::InvalidInput(format!("judge gave no valid score for {d}")))
                })
                .sum::<Result<f64>>()?
                / g.dimensions().len() as f64;
            sub_scores.extend(scores.into_iter().filter(|(k, _)| g.dimensions().contains(&k.as_str())));
            Ok(mean)
        });
        groups.insert(g, cell.into());
    }
    let core = groups.remove(&DimensionGroup::Core).expect("all groups scored");
    let writing = groups.remove(&DimensionGroup::Writing).expect("all groups scored");
    let depth = groups.remove(&DimensionGroup::Depth).expect("all groups scored");
    let total = match (core.value(), writing.value(), depth.value()) {
        (Some(c), Some(w), Some(d)) => ContentScores::new(c, w, d)
            .and_then(|s| weighted_content_score(&s))
            .into(),
        _ => MetricCell::Error("content scores incomplete".into()),
    };
    EvaluationReport {
        system: input.system.to_string(),
        claims: claims.len(),
        nli_queries: queries.len(),
        citation_recall,
        citation_precision,
        valid_citation_ratio,
        core,
        writing,
        depth,
        total,
        sub_scores,
        warnings,
    }
}
