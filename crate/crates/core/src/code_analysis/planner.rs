//! The planner-driven pseudocode loop for one repository.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::repo::{check_relative, RepoSnapshot};
use super::{CodeAnalysisConfig, STAGE};
use crate::context::Context;
use crate::error::{Error, Result};
use crate::gateway::{estimate_tokens, parse_json, CallSpec};
use crate::model::{ErrorMemory, EventKind};
use crate::prompts::{self, tags, Prompt};

/// Lines of a file kept in the loop memory after a read.
const EXCERPT_LINES: usize = 30;
/// File paths listed to the planner.
const MAX_LISTED_FILES: usize = 400;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PlannerOp {
    GetSourceCode { path: String },
    Create,
    Revise,
    Review,
    Finish,
}

impl fmt::Display for PlannerOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlannerOp::GetSourceCode { path } => write!(f, "get_source_code({path})"),
            PlannerOp::Create => f.write_str("create"),
            PlannerOp::Revise => f.write_str("revise"),
            PlannerOp::Review => f.write_str("review"),
            PlannerOp::Finish => f.write_str("finish"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanStep {
    pub op: PlannerOp,
    pub rationale: String,
}

#[derive(Deserialize)]
struct RawPlan {
    plan: Vec<RawStep>,
}

#[derive(Deserialize)]
struct RawStep {
    op: String,
    #[serde(default)]
    path: Option<String>,
    #[serde(default)]
    rationale: String,
}

/// Parses a planner reply into an ordered sub-plan.
pub fn parse_plan(raw: &str) -> std::result::Result<Vec<PlanStep>, String> {
    let p: RawPlan = parse_json(raw)?;
    if p.plan.is_empty() {
        return Err("the plan is empty; give at least one step".into());
    }
    p.plan
        .into_iter()
        .map(|s| {
            let op = match s.op.trim().to_ascii_lowercase().as_str() {
                "get_source_code" => {
                    let path = s
                        .path
                        .as_deref()
                        .ok_or("get_source_code needs a path")?;
                    let path = check_relative(path).map_err(|e| e.to_string())?;
                    PlannerOp::GetSourceCode { path }
                }
                "create" => PlannerOp::Create,
                "revise" => PlannerOp::Revise,
                "review" => PlannerOp::Review,
                "finish" => PlannerOp::Finish,
                other => {
                    return Err(format!(
                        "unknown op '{other}'; use get_source_code, create, revise, review or finish"
                    ))
                }
            };
            Ok(PlanStep {
                op,
                rationale: s.rationale.trim().to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudocodeReview {
    pub conciseness: u8,
    pub logical_structure: u8,
    pub implementation_specificity: u8,
    #[serde(default)]
    pub suggestions: Vec<String>,
}

impl PseudocodeReview {
    pub fn parse(raw: &str) -> std::result::Result<Self, String> {
        let r: PseudocodeReview = parse_json(raw)?;
        for (name, v) in [
            ("conciseness", r.conciseness),
            ("logical_structure", r.logical_structure),
            ("implementation_specificity", r.implementation_specificity),
        ] {
            if v > 10 {
                return Err(format!("{name} = {v} is outside 0..=10"));
            }
        }
        Ok(r)
    }

    pub fn summary(&self) -> String {
        format!(
            "conciseness {}, logical structure {}, specificity {}",
            self.conciseness, self.logical_structure, self.implementation_specificity
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub round: u32,
    pub op: PlannerOp,
    /// False for rejected ops and failed reads.
    pub accepted: bool,
    /// Inserted by the cadence rule rather than chosen by the planner.
    pub forced: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudocodeRun {
    pub pseudocode: String,
    pub trail: Vec<TraceStep>,
    pub reviews: Vec<PseudocodeReview>,
    pub finished: bool,
    pub rounds: u32,
    /// Largest memory size seen when the planner was called.
    pub peak_memory_tokens: usize,
}

/// Checks the accepted part of a trail against the loop rules.
pub fn check_trace(trail: &[TraceStep], min_reads: usize, revise_every: u32) -> std::result::Result<(), String> {
    let mut reads = BTreeSet::new();
    let mut created = false;
    let mut since = 0u32;
    let accepted: Vec<&TraceStep> = trail.iter().filter(|s| s.accepted).collect();
    for (i, s) in accepted.iter().enumerate() {
        match &s.op {
            PlannerOp::GetSourceCode { path } => {
                reads.insert(path.clone());
            }
            PlannerOp::Create => {
                if reads.len() < min_reads {
                    return Err(format!("round {}: create after {} reads", s.round, reads.len()));
                }
            }
            PlannerOp::Finish
                if i + 1 != accepted.len() => {
                    return Err(format!("round {}: finish is not last", s.round));
                }
            _ => {}
        }
        match s.op {
            PlannerOp::Create | PlannerOp::Revise => {
                created = true;
                since = 0;
            }
            _ if created => {
                since += 1;
                if since > revise_every {
                    return Err(format!(
                        "round {}: {since} steps since the last revision",
                        s.round
                    ));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Entry {
    header: String,
    body: String,
}

/// Operation history and review feedback shown to the planner.
#[derive(Debug, Clone, Default)]
pub struct LoopMemory {
    entries: Vec<Entry>,
    omitted: usize,
}

impl LoopMemory {
    fn push(&mut self, header: String, body: String) {
        self.entries.push(Entry { header, body });
    }

    #[cfg(test)]
    pub(crate) fn push_for_test(&mut self, header: String, body: String) {
        self.push(header, body);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        if self.omitted > 0 {
            out.push_str(&format!("({} earlier steps omitted)\n", self.omitted));
        }
        for e in &self.entries {
            out.push_str(&e.header);
            out.push('\n');
            if !e.body.is_empty() {
                out.push_str(&e.body);
                out.push('\n');
            }
        }
        out
    }

    pub fn tokens(&self) -> usize {
        estimate_tokens(&self.render())
    }

    /// Elides bodies oldest first, then drops the oldest entries, until the
    /// estimate is within `threshold`. Returns whether anything changed.
    pub fn compress(&mut self, threshold: usize) -> bool {
        let mut changed = false;
        let mut i = 0;
        while self.tokens() > threshold && i < self.entries.len() {
            if !self.entries[i].body.is_empty() {
                self.entries[i].body.clear();
                changed = true;
            }
            i += 1;
        }
        while self.tokens() > threshold && !self.entries.is_empty() {
            self.entries.remove(0);
            self.omitted += 1;
            changed = true;
        }
        changed
    }
}

fn excerpt(text: &str) -> String {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = lines[..lines.len().min(EXCERPT_LINES)].join("\n");
    if lines.len() > EXCERPT_LINES {
        out.push_str(&format!("\n... ({} more lines)", lines.len() - EXCERPT_LINES));
    }
    out
}

struct LoopState<'a> {
    ctx: &'a Context,
    repo: &'a RepoSnapshot,
    cfg: &'a CodeAnalysisConfig,
    memory: LoopMemory,
    errors: ErrorMemory,
    read: Vec<String>,
    pseudocode: Option<String>,
    since_update: u32,
    reviews: Vec<PseudocodeReview>,
    trail: Vec<TraceStep>,
    round: u32,
}

impl LoopState<'_> {
    fn subject(&self) -> String {
        self.repo.paper_id.to_string()
    }

    fn sources(&self) -> String {
        self.read
            .iter()
            .map(|p| format!("### {p}\n```\n{}\n```\n", self.repo.files[p]))
            .collect()
    }

    fn legality(&self, op: &PlannerOp) -> std::result::Result<(), String> {
        let have = self.pseudocode.is_some();
        match op {
            PlannerOp::Create if self.read.len() < self.cfg.min_reads => Err(format!(
                "create needs at least {} source files read first; {} read so far",
                self.cfg.min_reads,
                self.read.len()
            )),
            PlannerOp::Revise | PlannerOp::Review | PlannerOp::Finish if !have => Err(format!(
                "{op} needs existing pseudocode; call create first"
            )),
            _ => Ok(()),
        }
    }

    fn log(&mut self, op: PlannerOp, accepted: bool, forced: bool, note: String) {
        self.trail.push(TraceStep {
            round: self.round,
            op,
            accepted,
            forced,
            note,
        });
    }

    /// Runs one op in a fresh round. Returns Ok(false) when the op was
    /// rejected, which aborts the rest of the sub-plan.
    fn execute(&mut self, op: PlannerOp, forced: bool) -> Result<bool> {
        self.round += 1;
        let r = self.round;
        if let Err(msg) = self.legality(&op) {
            self.errors.record(msg.clone());
            self.memory.push(format!("round {r}: {op} rejected: {msg}"), String::new());
            self.ctx
                .events
                .record(STAGE, EventKind::Rejection, Some(&self.subject()), format!("round {r}: {msg}"));
            if self.pseudocode.is_some() {
                self.since_update += 1;
            }
            self.log(op, false, forced, msg);
            return Ok(false);
        }
        let mut accepted = true;
        let note = match &op {
            PlannerOp::GetSourceCode { path } => match self.repo.read(path) {
                Some(text) => {
                    let n = text.lines().count();
                    if !self.read.contains(path) {
                        self.read.push(path.clone());
                    }
                    self.memory
                        .push(format!("round {r}: read {path} ({n} lines)"), excerpt(text));
                    format!("{n} lines")
                }
                None => {
                    accepted = false;
                    let msg = format!("file '{path}' does not exist in the repository");
                    self.errors.record(msg.clone());
                    self.memory.push(format!("round {r}: read failed: {msg}"), String::new());
                    msg
                }
            },
            PlannerOp::Create => {
                let prompt = Prompt::new(
                    tags::CODE_CREATE,
                    prompts::CODE_CREATE,
                    json!({ "paper_id": self.repo.paper_id.as_str(), "files_read": self.read }),
                )
                .with_evidence(self.sources());
                let text = self.ctx.ask_text(
                    &prompt,
                    &CallSpec::new(tags::CODE_CREATE, self.cfg.creator_temperature)
                        .max_retries(self.cfg.retries)
                        .subject(self.subject()),
                    &mut ErrorMemory::new(),
                )?;
                let n = text.lines().count();
                self.memory
                    .push(format!("round {r}: created pseudocode ({n} lines)"), text.clone());
                self.pseudocode = Some(text);
                format!("{n} lines")
            }
            PlannerOp::Revise => {
                let suggestions = self
                    .reviews
                    .last()
                    .map(|rv| rv.suggestions.clone())
                    .unwrap_or_default();
                let current = self.pseudocode.clone().unwrap_or_default();
                let prompt = Prompt::new(
                    tags::CODE_REVISE,
                    prompts::CODE_REVISE,
                    json!({ "paper_id": self.repo.paper_id.as_str(), "suggestions": suggestions }),
                )
                .with_evidence(format!("Pseudocode:\n{current}\n\nSources:\n{}", self.sources()));
                let text = self.ctx.ask_text(
                    &prompt,
                    &CallSpec::new(tags::CODE_REVISE, self.cfg.reviser_temperature)
                        .max_retries(self.cfg.retries)
                        .subject(self.subject()),
                    &mut ErrorMemory::new(),
                )?;
                let n = text.lines().count();
                self.memory
                    .push(format!("round {r}: revised pseudocode ({n} lines)"), text.clone());
                self.pseudocode = Some(text);
                format!("{n} lines")
            }
            PlannerOp::Review => {
                let prompt = Prompt::new(
                    tags::CODE_REVIEW,
                    prompts::CODE_REVIEW,
                    json!({ "paper_id": self.repo.paper_id.as_str(), "round": r }),
                )
                .with_evidence(self.pseudocode.clone().unwrap_or_default());
                let review = self.ctx.ask(
                    &prompt,
                    &CallSpec::new(tags::CODE_REVIEW, self.cfg.reviewer_temperature)
                        .max_retries(self.cfg.retries)
                        .subject(self.subject()),
                    &mut ErrorMemory::new(),
                    PseudocodeReview::parse,
                )?;
                let note = review.summary();
                self.memory.push(
                    format!("round {r}: review: {note}"),
                    review
                        .suggestions
                        .iter()
                        .map(|s| format!("- {s}"))
                        .collect::<Vec<_>>()
                        .join("\n"),
                );
                self.reviews.push(review);
                note
            }
            PlannerOp::Finish => {
                self.memory.push(format!("round {r}: finish"), String::new());
                String::new()
            }
        };
        match op {
            PlannerOp::Create | PlannerOp::Revise => self.since_update = 0,
            _ if self.pseudocode.is_some() => self.since_update += 1,
            _ => {}
        }
        self.log(op, accepted, forced, note);
        Ok(true)
    }

    fn plan(&mut self) -> Result<Vec<PlanStep>> {
        let files: Vec<&String> = self.repo.files.keys().take(MAX_LISTED_FILES).collect();
        let prompt = Prompt::new(
            tags::CODE_PLANNER,
            prompts::CODE_PLANNER,
            json!({
                "paper_id": self.repo.paper_id.as_str(),
                "files": files,
                "files_read": self.read,
                "pseudocode_exists": self.pseudocode.is_some(),
                "round": self.round,
                "rounds_left": self.cfg.max_rounds - self.round,
                "steps_since_revision": self.since_update,
            }),
        )
        .with_evidence(self.memory.render());
        self.ctx.ask(
            &prompt,
            &CallSpec::new(tags::CODE_PLANNER, self.cfg.planner_temperature)
                .max_retries(self.cfg.retries)
                .subject(self.subject()),
            &mut self.errors,
            parse_plan,
        )
    }
}

/// Drives the planner until it finishes or `cfg.max_rounds` rounds are used.
/// Each executed op, including a rejected one, uses one round.
pub fn run_pseudocode_loop(ctx: &Context, repo: &RepoSnapshot, cfg: &CodeAnalysisConfig) -> Result<PseudocodeRun> {
    if repo.is_empty() {
        return Err(Error::Precondition(format!("repository of {} is empty", repo.paper_id)));
    }
    if cfg.max_rounds == 0 {
        return Err(Error::InvalidInput("max_rounds must be at least 1".into()));
    }
    let mut st = LoopState {
        ctx,
        repo,
        cfg,
        memory: LoopMemory::default(),
        errors: ErrorMemory::new(),
        read: Vec::new(),
        pseudocode: None,
        since_update: 0,
        reviews: Vec::new(),
        trail: Vec::new(),
        round: 0,
    };
    let mut peak = 0;
    let mut finished = false;
    'outer: while st.round < cfg.max_rounds {
        let before = st.memory.tokens();
        if st.memory.compress(cfg.memory_threshold) {
            ctx.events.record(
                STAGE,
                EventKind::Compression,
                Some(&st.subject()),
                format!("loop memory cut from {before} to {} tokens", st.memory.tokens()),
            );
        }
        peak = peak.max(st.memory.tokens());
        let plan = st.plan()?;
        for step in plan {
            if st.round >= cfg.max_rounds {
                break 'outer;
            }
            let revisable = st.pseudocode.is_some() && !matches!(step.op, PlannerOp::Revise | PlannerOp::Create);
            if revisable && st.since_update >= cfg.revise_every {
                ctx.events.record(
                    STAGE,
                    EventKind::Info,
                    Some(&st.subject()),
                    format!("round {}: revise inserted by the cadence rule", st.round + 1),
                );
                st.execute(PlannerOp::Revise, true)?;
                if st.round >= cfg.max_rounds {
                    break 'outer;
                }
            }
            let is_finish = step.op == PlannerOp::Finish;
            if !st.execute(step.op, false)? {
                continue 'outer;
            }
            if is_finish {
                finished = true;
                break 'outer;
            }
        }
    }
    if !finished {
        ctx.events.record(
            STAGE,
            EventKind::Exhaustion,
            Some(&st.subject()),
            format!("stopped after {} rounds without finish", st.round),
        );
    }
    Ok(PseudocodeRun {
        pseudocode: st.pseudocode.unwrap_or_default(),
        trail: st.trail,
        reviews: st.reviews,
        finished,
        rounds: st.round,
        peak_memory_tokens: peak,
    })
}
