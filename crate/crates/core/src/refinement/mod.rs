//! Multi-granularity refinement: a planner chooses reader, reviewer and
//! reviser skills each round, with every revision re-verified before it
//! replaces the current text.

mod memory;
mod skills;
mod units;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use memory::{MemoryEvent, RefinementMemory};
pub use skills::{parse_plan, read_keynotes_skill, review_skill, revise_skill, ReadBundle, Revision, ReviewVerdict, Skill};
pub use units::{accept_revision, allowed_for, parse_units, render_units, targets, RefineTarget};

use crate::context::Context;
use crate::error::{Error, Result};
use crate::gateway::{parallel_map, CallSpec};
use crate::model::{
    CitationStyle, CodeReport, DraftUnit, ErrorMemory, EventKind, Granularity, KnowledgeSubstrate, LogEvent, NodePath,
    OutlineNode, PaperId,
};
use crate::prompts::{self, tags, Prompt};
use crate::writing::{CitationResolver, WritingInputs};

pub(crate) const STAGE: &str = "refinement";

/// Loop settings for one granularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub enabled: bool,
    pub max_rounds: u32,
    pub planner_temperature: f64,
    pub reviewer_temperature: f64,
    pub reviser_temperature: f64,
}

impl LevelConfig {
    fn broad(max_rounds: u32) -> Self {
        Self {
            enabled: true,
            max_rounds,
            planner_temperature: 0.7,
            reviewer_temperature: 1.0,
            reviser_temperature: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinementConfig {
    pub subsection: LevelConfig,
    pub section: LevelConfig,
    pub survey: LevelConfig,
    /// Order in which the enabled levels run.
    pub order: Vec<Granularity>,
    /// Alternate review and revise without a planner.
    pub skill_loop: bool,
    /// Steps of one sub-plan that are executed; the rest are dropped.
    pub max_plan_len: usize,
    /// Reply retries for planner and reviewer calls.
    pub retries: u32,
    /// Generations per revise step, including the first.
    pub revise_attempts: u32,
    /// Token budget of a reader bundle.
    pub reader_budget: usize,
    /// Token budget of the memory shown to the planner.
    pub memory_budget: usize,
    /// Add pseudocode to reader bundles when repository analysis ran.
    pub include_code: bool,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            subsection: LevelConfig {
                enabled: true,
                max_rounds: 3,
                planner_temperature: 0.1,
                reviewer_temperature: 0.1,
                reviser_temperature: 0.1,
            },
            section: LevelConfig::broad(3),
            survey: LevelConfig::broad(5),
            order: vec![Granularity::Section, Granularity::Subsection, Granularity::Survey],
            skill_loop: false,
            max_plan_len: 4,
            retries: 3,
            revise_attempts: 2,
            reader_budget: 16_000,
            memory_budget: 4_000,
            include_code: true,
        }
    }
}

impl RefinementConfig {
    pub fn level(&self, g: Granularity) -> &LevelConfig {
        match g {
            Granularity::Subsection => &self.subsection,
            Granularity::Section => &self.section,
            Granularity::Survey => &self.survey,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for g in [Granularity::Subsection, Granularity::Section, Granularity::Survey] {
            if self.level(g).enabled && self.level(g).max_rounds == 0 {
                return Err(Error::Config(format!("refinement.{g}.max_rounds must be at least 1")));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        if !self.order.iter().all(|g| seen.insert(*g)) {
            return Err(Error::Config("refinement.order lists a level twice".into()));
        }
        if self.max_plan_len == 0 || self.revise_attempts == 0 {
            return Err(Error::Config(
                "refinement.max_plan_len and revise_attempts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything a refinement loop reads.
pub struct RefineEnv<'a> {
    pub inputs: WritingInputs<'a>,
    pub outline: &'a OutlineNode,
    pub resolver: CitationResolver,
    pub style: CitationStyle,
    pub code_reports: Option<&'a BTreeMap<PaperId, CodeReport>>,
    pub cfg: &'a RefinementConfig,
}

impl<'a> RefineEnv<'a> {
    pub fn new(s: &'a KnowledgeSubstrate, outline: &'a OutlineNode, style: CitationStyle, cfg: &'a RefinementConfig) -> Self {
        let inputs = WritingInputs::of(s);
        Self {
            resolver: inputs.resolver(),
            inputs,
            outline,
            style,
            code_reports: Some(&s.code_reports),
            cfg,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub target: RefineTarget,
    pub units: Vec<DraftUnit>,
    pub memory: RefinementMemory,
    pub rounds: u32,
    pub finished: bool,
    pub skills_run: usize,
}

struct LoopState {
    text: String,
    units: Vec<DraftUnit>,
    memory: RefinementMemory,
    evidence: String,
    suggestions: Vec<String>,
    step: u32,
}

impl LoopState {
    fn new(target: &RefineTarget, drafts: &BTreeMap<NodePath, DraftUnit>) -> Result<Self> {
        Ok(Self {
            text: render_units(target, drafts)?,
            units: target.paths.iter().map(|p| drafts[p].clone()).collect(),
            memory: RefinementMemory::new(),
            evidence: String::new(),
            suggestions: Vec::new(),
            step: 0,
        })
    }

    fn review(&mut self, ctx: &Context, env: &RefineEnv<'_>, target: &RefineTarget, round: u32, level: &LevelConfig) -> Option<ReviewVerdict> {
        self.step += 1;
        match review_skill(ctx, env, target, &self.text, self.step, level) {
            Ok(v) => {
                self.memory.record_review(round, &v.scores, v.summary());
                self.suggestions = v.suggestions.clone();
                Some(v)
            }
            Err(e) => {
                self.memory.push(round, "review", format!("review failed: {e}"), None);
                None
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn revise(
        &mut self,
        ctx: &Context,
        env: &RefineEnv<'_>,
        target: &RefineTarget,
        drafts: &BTreeMap<NodePath, DraftUnit>,
        instructions: &str,
        round: u32,
        level: &LevelConfig,
    ) {
        self.step += 1;
        let result = revise_skill(
            ctx,
            env,
            target,
            drafts,
            &self.text,
            instructions,
            &self.suggestions,
            &self.evidence,
            self.step,
            level,
        );
        match result {
            Ok(Revision::Accepted { text, units }) => {
                self.text = text;
                self.units = units;
                self.memory.push(round, "revise", "revision accepted", None);
            }
            Ok(Revision::Rejected(why)) => {
                self.memory
                    .push(round, "revise", format!("revision rejected, text kept: {why}"), None);
            }
            Err(e) => {
                self.memory.push(round, "revise", format!("revise failed: {e}"), None);
            }
        }
    }

    fn finish(self, target: &RefineTarget, rounds: u32, finished: bool) -> RefineOutcome {
        RefineOutcome {
            target: target.clone(),
            skills_run: self.memory.len(),
            units: self.units,
            memory: self.memory,
            rounds,
            finished,
        }
    }
}

/// Planner-mediated loop over one target.
pub fn refine(
    ctx: &Context,
    env: &RefineEnv<'_>,
    target: &RefineTarget,
    drafts: &BTreeMap<NodePath, DraftUnit>,
    max_rounds: u32,
) -> Result<RefineOutcome> {
    if max_rounds == 0 {
        return Err(Error::InvalidInput("refinement needs at least one round".into()));
    }
    let level = env.cfg.level(target.granularity);
    let label = target.label();
    let mut st = LoopState::new(target, drafts)?;
    let mut rounds = 0;
    for round in 1..=max_rounds {
        rounds = round;
        let history = st.memory.render(env.cfg.memory_budget);
        let prompt = Prompt::new(
            tags::REFINE_PLANNER,
            prompts::REFINE_PLANNER,
            json!({
                "granularity": target.granularity.to_string(),
                "round": round,
                "rounds_left": max_rounds - round,
                "text": st.text,
                "paper_ids": target
                    .paths
                    .iter()
                    .flat_map(|p| allowed_for(env.outline, p))
                    .collect::<std::collections::BTreeSet<_>>()
                    .iter()
                    .map(PaperId::as_str)
                    .collect::<Vec<_>>(),
            }),
        )
        .with_evidence(format!(
            "Survey outline\n{}\nRevision history\n{}",
            env.outline.render(),
            if history.is_empty() { "(none yet)" } else { &history }
        ));
        let spec = CallSpec::new(tags::REFINE_PLANNER, level.planner_temperature)
            .max_retries(env.cfg.retries)
            .subject(label.clone());
        let plan = match ctx.ask(&prompt, &spec, &mut ErrorMemory::new(), parse_plan) {
            Ok(p) => p,
            Err(e) => {
                ctx.events
                    .record(STAGE, EventKind::Exhaustion, Some(&label), format!("planner failed: {e}"));
                return Ok(st.finish(target, round, false));
            }
        };
        if plan.len() > env.cfg.max_plan_len {
            ctx.events.record(
                STAGE,
                EventKind::Info,
                Some(&label),
                format!("plan of {} steps cut to {}", plan.len(), env.cfg.max_plan_len),
            );
        }
        for skill in plan.into_iter().take(env.cfg.max_plan_len) {
            match skill {
                Skill::ReadKeynotes(ids) => {
                    st.step += 1;
                    let bundle = read_keynotes_skill(ctx, env, &ids, env.cfg.reader_budget);
                    st.memory.push(
                        round,
                        "read_keynotes",
                        format!(
                            "read {} of {} requested papers: {}",
                            bundle.read.len(),
                            ids.len(),
                            bundle.read.iter().map(PaperId::as_str).collect::<Vec<_>>().join(", ")
                        ),
                        None,
                    );
                    st.evidence = bundle.text;
                }
                Skill::Review => {
                    st.review(ctx, env, target, round, level);
                }
                Skill::Revise(instructions) => st.revise(ctx, env, target, drafts, &instructions, round, level),
                Skill::Finish => {
                    st.memory.push(round, "finish", "planner ended refinement", None);
                    return Ok(st.finish(target, round, true));
                }
            }
        }
    }
    ctx.events.record(
        STAGE,
        EventKind::Exhaustion,
        Some(&label),
        format!("stopped after {max_rounds} rounds without finish"),
    );
    Ok(st.finish(target, rounds, false))
}

/// Planner-free schedule: review then revise, `rounds` times, stopping
/// early once the reviewer is satisfied.
pub fn skill_loop_fallback(
    ctx: &Context,
    env: &RefineEnv<'_>,
    target: &RefineTarget,
    drafts: &BTreeMap<NodePath, DraftUnit>,
    rounds: u32,
) -> Result<RefineOutcome> {
    if rounds == 0 {
        return Err(Error::InvalidInput("skill loop needs at least one round".into()));
    }
    let level = env.cfg.level(target.granularity);
    let mut st = LoopState::new(target, drafts)?;
    for round in 1..=rounds {
        if st.review(ctx, env, target, round, level).is_some_and(|v| v.satisfactory) {
            st.memory.push(round, "finish", "reviewer judged the text satisfactory", None);
            return Ok(st.finish(target, round, true));
        }
        st.revise(ctx, env, target, drafts, "Address the review suggestions.", round, level);
    }
    Ok(st.finish(target, rounds, false))
}

/// Result of the whole stage, for transcripts.
#[derive(Debug, Clone, Default)]
pub struct RefinementReport {
    pub outcomes: Vec<RefineOutcome>,
}

impl RefinementReport {
    /// Transcript file name and text per refined target.
    pub fn transcripts(&self) -> Vec<(String, String)> {
        self.outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let slug: String = o
                    .target
                    .label()
                    .chars()
                    .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
                    .collect();
                (
                    format!("{:03}_{}_{slug}.txt", i + 1, o.target.granularity),
                    o.memory.transcript(&o.target.label()),
                )
            })
            .collect()
    }
}

/// Runs each enabled level in configured order. Targets of one level
/// refine in parallel against the same snapshot of drafts.
pub fn run_refinement(
    ctx: &Context,
    s: &mut KnowledgeSubstrate,
    style: CitationStyle,
    cfg: &RefinementConfig,
) -> Result<RefinementReport> {
    cfg.validate()?;
    let outline = s
        .outline
        .clone()
        .ok_or_else(|| Error::Precondition("refinement needs an outline".into()))?;
    let mut drafts: BTreeMap<NodePath, DraftUnit> = s.drafts.iter().map(|d| (d.node_path.clone(), d.clone())).collect();
    let mut report = RefinementReport::default();
    let mut log = Vec::new();
    for &g in &cfg.order {
        let level = cfg.level(g);
        if !level.enabled {
            continue;
        }
        let ts = targets(&outline, g);
        let env = RefineEnv::new(s, &outline, style, cfg);
        let snapshot = &drafts;
        let outcomes: Vec<Result<RefineOutcome>> = parallel_map(ctx.workers, &ts, |t| {
            if cfg.skill_loop {
                skill_loop_fallback(ctx, &env, t, snapshot, level.max_rounds)
            } else {
                refine(ctx, &env, t, snapshot, level.max_rounds)
            }
        });
        let outcomes: Vec<RefineOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
        for o in outcomes {
            for u in &o.units {
                drafts.insert(u.node_path.clone(), u.clone());
            }
            for e in o.memory.events() {
                let delta = e.score_delta.map(|d| format!(" (score change {d:+.2})")).unwrap_or_default();
                log.push(LogEvent {
                    stage: STAGE.to_string(),
                    kind: EventKind::Skill,
                    subject: Some(format!("{}:{}", g, o.target.label())),
                    detail: format!("round {} {}: {}{delta}", e.round, e.skill, e.summary),
                });
            }
            report.outcomes.push(o);
        }
    }
    s.drafts = outline.nodes().into_iter().filter_map(|(p, _)| drafts.remove(&p)).collect();
    s.revision_log.extend(log);
    Ok(report)
}
