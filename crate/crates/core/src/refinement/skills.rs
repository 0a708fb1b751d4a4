//! Reader, reviewer and reviser skills plus the planner's plan format.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use serde_json::json;

use super::units::{accept_revision, RefineTarget};
use super::{LevelConfig, RefineEnv, STAGE};
use crate::context::{Context, Monitor};
use crate::error::{Error, Result};
use crate::gateway::{compress_context, parse_json, CallSpec};
use crate::model::{DraftUnit, ErrorMemory, EventKind, NodePath, PaperId};
use crate::prompts::{self, tags, Prompt};

/// One step of a planner sub-plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Skill {
    ReadKeynotes(Vec<String>),
    Review,
    Revise(String),
    Finish,
}

impl Skill {
    pub fn name(&self) -> &'static str {
        match self {
            Skill::ReadKeynotes(_) => "read_keynotes",
            Skill::Review => "review",
            Skill::Revise(_) => "revise",
            Skill::Finish => "finish",
        }
    }
}

#[derive(Deserialize)]
struct PlanReply {
    plan: Vec<PlanItem>,
}

#[derive(Deserialize)]
struct PlanItem {
    skill: String,
    #[serde(default)]
    paper_ids: Vec<String>,
    #[serde(default)]
    instructions: String,
}

/// Strict plan parse: known skills only, paper ids for reads, at least one
/// step.
pub fn parse_plan(raw: &str) -> std::result::Result<Vec<Skill>, String> {
    let reply: PlanReply = parse_json(raw)?;
    if reply.plan.is_empty() {
        return Err("the plan is empty; choose at least one skill".into());
    }
    reply
        .plan
        .into_iter()
        .map(|item| match item.skill.trim() {
            "read_keynotes" if item.paper_ids.is_empty() => {
                Err("read_keynotes needs a non-empty paper_ids list".to_string())
            }
            "read_keynotes" => Ok(Skill::ReadKeynotes(item.paper_ids)),
            "review" => Ok(Skill::Review),
            "revise" => Ok(Skill::Revise(item.instructions)),
            "finish" => Ok(Skill::Finish),
            other => Err(format!(
                "unknown skill '{other}'; use read_keynotes, review, revise or finish"
            )),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReviewVerdict {
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub suggestions: Vec<String>,
    #[serde(default)]
    pub satisfactory: bool,
}

impl ReviewVerdict {
    pub fn parse(raw: &str) -> std::result::Result<Self, String> {
        let v: ReviewVerdict = parse_json(raw)?;
        if v.scores.is_empty() {
            return Err("scores must name at least one dimension".into());
        }
        for (dim, s) in &v.scores {
            if !s.is_finite() || !(0.0..=10.0).contains(s) {
                return Err(format!("score for {dim} is {s}; scores run from 0 to 10"));
            }
        }
        Ok(v)
    }

    pub fn mean(&self) -> f64 {
        self.scores.values().sum::<f64>() / self.scores.len() as f64
    }

    pub fn summary(&self) -> String {
        let scores = self
            .scores
            .iter()
            .map(|(k, v)| format!("{k} {v}"))
            .collect::<Vec<_>>()
            .join(", ");
        let first = self.suggestions.first().map(|s| format!("; first suggestion: {s}")).unwrap_or_default();
        format!("scores {scores}{first}")
    }
}

/// Scores the current text.
pub fn review_skill(
    ctx: &Context,
    env: &RefineEnv<'_>,
    target: &RefineTarget,
    text: &str,
    step: u32,
    level: &LevelConfig,
) -> Result<ReviewVerdict> {
    let prompt = Prompt::new(
        tags::REFINE_REVIEW,
        prompts::REFINE_REVIEW,
        json!({
            "granularity": target.granularity.to_string(),
            "step": step,
            "text": text,
        }),
    )
    .with_evidence(format!("Survey outline\n{}", env.outline.render()));
    let spec = CallSpec::new(tags::REFINE_REVIEW, level.reviewer_temperature)
        .max_retries(env.cfg.retries)
        .subject(target.label());
    ctx.ask(&prompt, &spec, &mut ErrorMemory::new(), ReviewVerdict::parse)
}

/// Keynotes (and code reports when enabled) for the requested papers,
/// fitted into `budget` tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadBundle {
    pub text: String,
    pub read: Vec<PaperId>,
}

pub fn read_keynotes_skill(ctx: &Context, env: &RefineEnv<'_>, ids: &[String], budget: usize) -> ReadBundle {
    let mut monitor = Monitor::new(&ctx.events, STAGE, "keynote reader");
    let mut read = Vec::new();
    let mut parts = Vec::new();
    let mut seen = BTreeSet::new();
    for raw in ids {
        let known = PaperId::parse(raw).ok().filter(|id| env.inputs.papers.contains_key(id));
        let Some(id) = known else {
            monitor.flag(raw.trim(), "reader asked for a paper outside the corpus");
            continue;
        };
        if !seen.insert(id.clone()) {
            continue;
        }
        let mut part = format!(
            "{}citation key: <{}>\n",
            env.inputs.digest(&id),
            env.resolver.key_for(&id, env.style)
        );
        if env.cfg.include_code {
            if let Some(code) = env.code_reports.and_then(|m| m.get(&id)) {
                part.push_str(&format!("pseudocode:\n{}\n", code.pseudocode));
            }
        }
        parts.push(part);
        read.push(id);
    }
    let text = parts.join("\n");
    let fitted = compress_context("", &text, budget).expect("empty core always fits");
    if fitted.was_compressed() {
        ctx.events.record(
            STAGE,
            EventKind::Compression,
            None,
            format!("reader bundle cut to {} chars", fitted.aux_kept.chars().count()),
        );
    }
    ReadBundle {
        text: fitted.aux_kept,
        read,
    }
}

/// Outcome of one revise step.
#[derive(Debug, Clone, PartialEq)]
pub enum Revision {
    Accepted { text: String, units: Vec<DraftUnit> },
    Rejected(String),
}

/// Revises the text; a reply that fails parse-back or citation checks is
/// regenerated with error memory until `revise_attempts` is spent.
#[allow(clippy::too_many_arguments)]
pub fn revise_skill(
    ctx: &Context,
    env: &RefineEnv<'_>,
    target: &RefineTarget,
    drafts: &BTreeMap<NodePath, DraftUnit>,
    text: &str,
    instructions: &str,
    suggestions: &[String],
    evidence: &str,
    step: u32,
    level: &LevelConfig,
) -> Result<Revision> {
    let allowed: BTreeSet<PaperId> = target
        .paths
        .iter()
        .flat_map(|p| super::units::allowed_for(env.outline, p))
        .collect();
    let keys: Vec<String> = allowed.iter().map(|id| env.resolver.key_for(id, env.style)).collect();
    let prompt = Prompt::new(
        tags::REFINE_REVISE,
        prompts::REFINE_REVISE,
        json!({
            "granularity": target.granularity.to_string(),
            "step": step,
            "instructions": instructions,
            "suggestions": suggestions,
            "allowed_keys": keys,
            "text": text,
        }),
    )
    .with_evidence(evidence.to_string());
    let spec = CallSpec::new(tags::REFINE_REVISE, level.reviser_temperature)
        .max_retries(env.cfg.revise_attempts.saturating_sub(1))
        .subject(target.label());
    let outcome = ctx.ask(&prompt, &spec, &mut ErrorMemory::new(), |raw| {
        let revised = raw.trim();
        let units = accept_revision(revised, target, env.outline, drafts, &env.resolver, env.style);
        if let Err(why) = &units {
            ctx.events
                .record(STAGE, EventKind::Rejection, Some(&target.label()), format!("revision rejected: {why}"));
        }
        units.map(|u| (revised.to_string(), u))
    });
    match outcome {
        Ok((text, units)) => Ok(Revision::Accepted { text, units }),
        Err(Error::Malformed { last_error, .. }) => Ok(Revision::Rejected(last_error)),
        Err(e) => Err(e),
    }
}
