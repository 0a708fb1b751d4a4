//! A deterministic text backend that answers every pipeline call without a
//! model. Replies are built from the request payload with simple lexical
//! heuristics, so the output is well-formed but not insightful. It powers
//! offline runs, demos and end-to-end tests.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::gateway::{CompletionRequest, TextBackend, TransportError};
use crate::model::MANDATORY_FIELDS;
use crate::prompts::{evidence_of, payload_of, tags};

const STOPWORDS: &[&str] = &[
    "about", "after", "also", "among", "approach", "based", "between", "both", "from", "have", "into", "more",
    "most", "other", "over", "paper", "papers", "show", "such", "than", "that", "their", "them", "these", "this",
    "those", "through", "using", "which", "while", "with", "within", "work", "works",
];

/// Lower-cased content words of at least four letters, in first-seen order.
fn content_words(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() >= 4 && !w.chars().all(|c| c.is_ascii_digit()))
        .map(str::to_lowercase)
        .filter(|w| !STOPWORDS.contains(&w.as_str()) && seen.insert(w.clone()))
        .collect()
}

fn overlap(a: &str, b: &str) -> usize {
    let a: BTreeSet<String> = content_words(a).into_iter().collect();
    content_words(b).into_iter().filter(|w| a.contains(w)).count()
}

fn digest_byte(text: &str) -> u8 {
    Sha256::digest(text.as_bytes())[0]
}

fn s<'a>(v: &'a Value, key: &str) -> &'a str {
    v.get(key).and_then(Value::as_str).unwrap_or("")
}

fn arr<'a>(v: &'a Value, key: &str) -> &'a [Value] {
    v.get(key).and_then(Value::as_array).map(Vec::as_slice).unwrap_or(&[])
}

fn strings(v: &Value, key: &str) -> Vec<String> {
    arr(v, key).iter().filter_map(Value::as_str).map(str::to_string).collect()
}

fn title_case(word: &str) -> String {
    let mut c = word.chars();
    c.next()
        .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
        .unwrap_or_default()
}

/// First sentences of `text` up to roughly `words` words, skipping
/// headings and blank lines.
fn excerpt(text: &str, words: usize) -> String {
    let flat: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#') && !l.starts_with("```"))
        .flat_map(str::split_whitespace)
        .take(words)
        .collect();
    flat.join(" ")
}

#[derive(Debug, Clone, Default)]
pub struct OfflineBackend;

impl OfflineBackend {
    pub fn new() -> Self {
        Self
    }

    fn reply(&self, req: &CompletionRequest) -> Option<String> {
        let p = payload_of(&req.prompt)?;
        let evidence = evidence_of(&req.prompt);
        let out = match req.tag.as_str() {
            tags::SEED_KEYWORDS => {
                let topic = s(&p, "topic");
                json!({ "queries": [format!("{topic} methods"), format!("{topic} evaluation")] }).to_string()
            }
            tags::SEED_JUDGE | tags::RERANK => judge(&p),
            tags::KEYNOTE | tags::KEYNOTE_MERGE | tags::KEYNOTE_CHUNK => keynote(&p, evidence),
            tags::CLUSTER_DESIGN => cluster_design(&p),
            tags::CLUSTER_ASSIGN => cluster_assign(&p),
            tags::RELATION_GRAPH => relation_graph(&p),
            tags::COMPARISON_TABLE => comparison_table(&p),
            tags::GUIDED_QA => guided_qa(&p),
            tags::INTER_CLUSTER => inter_cluster(&p),
            tags::CODE_PLANNER => code_planner(&p),
            tags::CODE_CREATE => format!(
                "procedure main({}):\n  load inputs\n  for each component: run its step\n  return results",
                strings(&p, "files_read").join(", ")
            ),
            tags::CODE_REVIEW => json!({
                "conciseness": 7,
                "logical_structure": 7,
                "implementation_specificity": 6,
                "suggestions": ["name the data structures passed between components"],
            })
            .to_string(),
            tags::CODE_REVISE => format!(
                "{}\n  // data structures named after review",
                evidence.lines().filter(|l| !l.trim().is_empty()).take(40).collect::<Vec<_>>().join("\n")
            ),
            tags::CODE_BATCH_REPORT | tags::CODE_INTEGRATE => {
                let ids = strings(&p, "paper_ids");
                let parts: Vec<String> = ids
                    .iter()
                    .map(|id| format!("The implementation in <{id}> follows a load, process and report pipeline."))
                    .collect();
                if parts.is_empty() {
                    excerpt(evidence, 200)
                } else {
                    parts.join(" ")
                }
            }
            tags::CODE_MERGE => excerpt(evidence, 400),
            tags::ENVIRONMENT_REPORT => environment(&p),
            tags::OUTLINE_DRAFT => outline(&p),
            tags::OUTLINE_REFINE => p.get("outline").cloned().unwrap_or(Value::Null).to_string(),
            tags::CITATION_ASSIGN => citation_assign(&p),
            tags::DRAFT_SUBSECTION | tags::DRAFT_SECTION => draft(&p),
            tags::REFINE_PLANNER => refine_plan(&p),
            tags::REFINE_REVIEW => {
                let step = p.get("step").and_then(Value::as_u64).unwrap_or(1);
                json!({
                    "scores": { "coherence": 7, "coverage": 7, "depth": 6, "citation_use": 7 },
                    "suggestions": ["connect adjacent paragraphs more explicitly"],
                    "satisfactory": step >= 2,
                })
                .to_string()
            }
            tags::REFINE_REVISE => s(&p, "text").to_string(),
            tags::NLI => {
                let claim = s(&p, "claim");
                let premises = strings(&p, "premises").join(" ");
                json!({ "entailed": overlap(claim, &premises) >= 1 }).to_string()
            }
            tags::JUDGE_SCORE => {
                let scores: BTreeMap<String, f64> = strings(&p, "dimensions")
                    .into_iter()
                    .map(|d| {
                        let v = 6.0 + f64::from(digest_byte(&format!("{d}{evidence}")) % 3);
                        (d, v)
                    })
                    .collect();
                json!({ "scores": scores }).to_string()
            }
            _ => return None,
        };
        Some(out)
    }
}

impl TextBackend for OfflineBackend {
    fn generate(&self, req: &CompletionRequest) -> Result<String, TransportError> {
        self.reply(req).ok_or_else(|| TransportError::Status {
            code: 400,
            message: format!("offline backend has no reply for tag '{}'", req.tag),
        })
    }

    fn name(&self) -> String {
        "offline".into()
    }
}

fn judge(p: &Value) -> String {
    let topic = s(p, "topic");
    let verdicts: Vec<Value> = arr(p, "papers")
        .iter()
        .map(|paper| {
            let text = format!("{} {}", s(paper, "title"), s(paper, "abstract"));
            let hits = overlap(topic, &text);
            json!({
                "paper_id": s(paper, "paper_id"),
                "relevant": hits > 0,
                "note": format!("{hits} topic terms in title and abstract"),
            })
        })
        .collect();
    json!({ "verdicts": verdicts }).to_string()
}

fn keynote(p: &Value, evidence: &str) -> String {
    let title = s(p, "title");
    let body = excerpt(evidence, 60);
    let body = if body.is_empty() { title.to_string() } else { body };
    let mut obj = serde_json::Map::new();
    for field in MANDATORY_FIELDS {
        let text = match field {
            "tldr" => format!("{title} studies {}.", content_words(&body).into_iter().take(4).collect::<Vec<_>>().join(", ")),
            "contributions" => format!("The paper contributes the following: {body}"),
            "methodology" => format!("Method as described in the text: {body}"),
            "experiments" => format!("Evaluation reported around: {body}"),
            "limitations" => "The text gives little detail on failure cases.".to_string(),
            _ => "Claims should be checked against independent benchmarks.".to_string(),
        };
        obj.insert(field.to_string(), Value::String(text));
    }
    Value::Object(obj).to_string()
}

/// Splits the batch into two to four contiguous groups named after their
/// most frequent title words. A non-empty prior list is kept as is.
fn cluster_design(p: &Value) -> String {
    let prior = arr(p, "prior");
    if !prior.is_empty() {
        return json!({ "clusters": prior }).to_string();
    }
    let papers = arr(p, "papers");
    let k = (papers.len() / 4).clamp(2, 4).min(papers.len().max(1));
    let size = papers.len().div_ceil(k).max(1);
    let mut used = BTreeSet::new();
    let clusters: Vec<Value> = papers
        .chunks(size)
        .enumerate()
        .map(|(i, group)| {
            let mut freq: BTreeMap<String, usize> = BTreeMap::new();
            for paper in group {
                for w in content_words(&format!("{} {}", s(paper, "title"), s(paper, "tldr"))) {
                    *freq.entry(w).or_default() += 1;
                }
            }
            let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut top: Vec<String> = ranked
                .iter()
                .map(|(w, _)| w.clone())
                .filter(|w| !used.contains(w))
                .take(2)
                .collect();
            if top.is_empty() {
                top.push(format!("theme{}", i + 1));
            }
            used.extend(top.iter().cloned());
            let name = top.iter().map(|w| title_case(w)).collect::<Vec<_>>().join(" and ");
            let ids: Vec<&str> = group.iter().map(|x| s(x, "paper_id")).collect();
            json!({
                "name": name,
                "summary": format!("Work centred on {}, including {}.", top.join(" and "), ids.join(", ")),
            })
        })
        .collect();
    json!({ "clusters": clusters }).to_string()
}

fn cluster_assign(p: &Value) -> String {
    let clusters = arr(p, "clusters");
    let assignments: Vec<Value> = arr(p, "papers")
        .iter()
        .enumerate()
        .map(|(i, paper)| {
            let id = s(paper, "paper_id");
            let text = format!("{} {}", s(paper, "title"), s(paper, "tldr"));
            let named: Vec<u64> = clusters
                .iter()
                .filter(|c| s(c, "summary").contains(id))
                .filter_map(|c| c.get("cluster_id").and_then(Value::as_u64))
                .collect();
            let ids = if !named.is_empty() {
                named
            } else {
                let best = clusters
                    .iter()
                    .enumerate()
                    .max_by_key(|(j, c)| (overlap(&text, &format!("{} {}", s(c, "name"), s(c, "summary"))), usize::MAX - j))
                    .filter(|(_, c)| overlap(&text, &format!("{} {}", s(c, "name"), s(c, "summary"))) > 0)
                    .map(|(_, c)| c)
                    .or_else(|| clusters.get(i % clusters.len().max(1)));
                best.and_then(|c| c.get("cluster_id").and_then(Value::as_u64)).into_iter().collect()
            };
            json!({ "paper_id": id, "cluster_ids": ids })
        })
        .collect();
    json!({ "assignments": assignments }).to_string()
}

fn member_ids(p: &Value) -> Vec<String> {
    arr(p, "papers").iter().map(|x| s(x, "paper_id").to_string()).collect()
}

fn relation_graph(p: &Value) -> String {
    let ids = member_ids(p);
    let kinds = ["foundation", "extension", "substitution"];
    let edges: Vec<Value> = ids
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            json!({
                "source": w[0],
                "target": w[1],
                "relation": kinds[i % kinds.len()],
                "description": format!("{} is positioned relative to {}.", w[1], w[0]),
            })
        })
        .collect();
    json!({ "edges": edges }).to_string()
}

fn comparison_table(p: &Value) -> String {
    let columns = ["focus", "technique", "evaluation"];
    let rows: Vec<Value> = arr(p, "papers")
        .iter()
        .map(|paper| {
            let words = content_words(s(paper, "title"));
            let pick = |i: usize| words.get(i).or(words.first()).cloned().unwrap_or_else(|| "unspecified".into());
            json!({
                "paper_id": s(paper, "paper_id"),
                "cells": { "focus": pick(0), "technique": pick(1), "evaluation": pick(2) },
            })
        })
        .collect();
    json!({ "columns": columns, "rows": rows }).to_string()
}

fn guided_qa(p: &Value) -> String {
    let ids = member_ids(p);
    let n = p.get("n_questions").and_then(Value::as_u64).unwrap_or(1) as usize;
    let name = s(p.get("cluster").unwrap_or(&Value::Null), "name");
    let items: Vec<Value> = (0..n)
        .map(|q| {
            let a = &ids[q % ids.len()];
            let b = &ids[(q + 1) % ids.len()];
            json!({
                "question": format!("How do {a} and {b} differ within {name} (question {})?", q + 1),
                "related": [a, b],
                "answer": format!("<{a}> and <{b}> address {name} with different design choices."),
            })
        })
        .collect();
    json!({ "items": items }).to_string()
}

fn inter_cluster(p: &Value) -> String {
    let parts: Vec<String> = arr(p, "clusters")
        .iter()
        .filter_map(|c| {
            let first = arr(c, "papers").first()?.as_str()?;
            Some(format!("The group on {} is represented by <{first}>.", s(c, "name")))
        })
        .collect();
    format!(
        "{} The groups share evaluation concerns and differ in where they place the main cost.",
        parts.join(" ")
    )
}

fn code_planner(p: &Value) -> String {
    let files = strings(p, "files");
    let read: BTreeSet<String> = strings(p, "files_read").into_iter().collect();
    let exists = p.get("pseudocode_exists").and_then(Value::as_bool).unwrap_or(false);
    let plan = if !exists {
        let unread: Vec<&String> = files.iter().filter(|f| !read.contains(*f)).collect();
        if read.len() >= 3 || unread.is_empty() {
            json!([{ "op": "create", "rationale": "enough files have been read" }])
        } else {
            let steps: Vec<Value> = unread
                .iter()
                .take(3 - read.len().min(3))
                .map(|f| json!({ "op": "get_source_code", "path": f, "rationale": "core source file" }))
                .collect();
            Value::Array(steps)
        }
    } else {
        json!([
            { "op": "review", "rationale": "check the draft" },
            { "op": "revise", "rationale": "apply the review" },
            { "op": "finish", "rationale": "pseudocode is usable" },
        ])
    };
    json!({ "plan": plan }).to_string()
}

fn environment(p: &Value) -> String {
    let repos = arr(p, "repositories");
    let mut out = String::from("## Frameworks\n\nRepositories rely on common scientific Python tooling.\n\n");
    out.push_str("## Dependencies\n\n| repository | configuration files |\n|---|---|\n");
    for r in repos {
        let id = s(r, "paper_id");
        let files = r
            .get("config_files")
            .and_then(Value::as_array)
            .map(|f| f.iter().map(|x| s(x, "path")).collect::<Vec<_>>().join(", "))
            .unwrap_or_else(|| "none".to_string());
        out.push_str(&format!("| {id} | {files} |\n"));
    }
    out
}

fn outline(p: &Value) -> String {
    let topic = s(p, "topic");
    let mut sections = vec![json!({
        "title": "Introduction",
        "description": format!("Scope and motivation of {topic}."),
        "subsections": [],
    })];
    for c in arr(p, "clusters") {
        let name = s(c, "name");
        let ids = strings(c, "paper_ids");
        let half = ids.len().div_ceil(2);
        let mut subs = vec![json!({
            "title": format!("{name}: Core Methods"),
            "description": format!("Covers {}.", ids[..half].join(", ")),
        })];
        if ids.len() > 1 {
            subs.push(json!({
                "title": format!("{name}: Extensions"),
                "description": format!("Covers {}.", ids[half..].join(", ")),
            }));
        }
        sections.push(json!({ "title": name, "description": s(c, "summary"), "subsections": subs }));
    }
    sections.push(json!({
        "title": "Open Problems and Future Directions",
        "description": "Gaps that the reviewed work leaves open.",
        "subsections": [],
    }));
    sections.push(json!({
        "title": "Conclusion",
        "description": "Summary of the survey.",
        "subsections": [],
    }));
    json!({ "title": format!("A Survey of {}", title_case(topic)), "sections": sections }).to_string()
}

/// Each paper goes to every node whose description names it, plus one of
/// the nodes that name no paper, taken in turn.
fn citation_assign(p: &Value) -> String {
    let nodes = arr(p, "nodes");
    let papers = arr(p, "papers");
    let ids: Vec<&str> = papers.iter().map(|x| s(x, "paper_id")).collect();
    let general: Vec<&str> = nodes
        .iter()
        .filter(|n| !ids.iter().any(|id| s(n, "description").contains(id)))
        .map(|n| s(n, "title"))
        .collect();
    let assignments: Vec<Value> = papers
        .iter()
        .enumerate()
        .map(|(i, paper)| {
            let id = s(paper, "paper_id");
            let mut sections: Vec<&str> = nodes
                .iter()
                .filter(|n| s(n, "description").contains(id))
                .map(|n| s(n, "title"))
                .collect();
            if !general.is_empty() {
                sections.push(general[i % general.len()]);
            }
            json!({ "paper_id": id, "sections": sections })
        })
        .collect();
    json!({ "assignments": assignments }).to_string()
}

/// Prose that cites every allowed key once and pads to the word floor.
fn draft(p: &Value) -> String {
    let node = p.get("node").unwrap_or(&Value::Null);
    let title = s(node, "title");
    let topic = s(p, "topic");
    let keys = strings(p, "allowed_keys");
    let min_words = p.get("min_words").and_then(Value::as_u64).unwrap_or(0) as usize;
    let openers = [
        "A representative line of work on",
        "Further evidence about",
        "A complementary perspective on",
        "Another contribution to",
    ];
    let mut sentences: Vec<String> = keys
        .iter()
        .enumerate()
        .map(|(i, k)| {
            format!(
                "{} {} comes from <{k}>, which reports concrete design choices and measured trade-offs.",
                openers[i % openers.len()],
                title.to_lowercase()
            )
        })
        .collect();
    let fillers = [
        format!("Taken together, these studies clarify how {title} fits into the wider landscape of {topic}."),
        "They differ mainly in what they assume about available data, compute and supervision.".to_string(),
        "Comparisons across them remain difficult because evaluation settings rarely coincide.".to_string(),
        "A shared limitation is the reliance on benchmarks that only partly reflect deployment conditions.".to_string(),
    ];
    let mut i = 0;
    let count = |v: &[String]| v.iter().map(|x| crate::writing::count_words(x)).sum::<usize>();
    while count(&sentences) < min_words {
        sentences.push(fillers[i % fillers.len()].clone());
        i += 1;
    }
    sentences.join(" ").replace('#', "")
}

fn refine_plan(p: &Value) -> String {
    let round = p.get("round").and_then(Value::as_u64).unwrap_or(1);
    let plan = if round <= 1 {
        let mut steps = Vec::new();
        if let Some(first) = arr(p, "paper_ids").first() {
            steps.push(json!({ "skill": "read_keynotes", "paper_ids": [first] }));
        }
        steps.push(json!({ "skill": "review" }));
        steps.push(json!({ "skill": "revise", "instructions": "tighten transitions between paragraphs" }));
        Value::Array(steps)
    } else {
        json!([{ "skill": "finish" }])
    };
    json!({ "plan": plan }).to_string()
}
