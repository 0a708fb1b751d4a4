//! Evidence-set construction: seed search, judge filtering, citation-graph
//! expansion, and a coarse embedding filter followed by a model re-rank.

mod http;
mod source;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use http::{parse_atom, ArxivSource, SemanticScholarSource};
pub use source::{FixtureSource, PaperSource, UnavailableSource};

use crate::context::Context;
use crate::error::{Error, Result};
use crate::gateway::{cosine, parallel_map, parse_json, CallSpec};
use crate::model::{ErrorMemory, EventKind, EventLog, PaperId, PaperRecord};
use crate::prompts::{self, tags, Prompt};

const STAGE: &str = "retrieval";
/// Neighbor lists are fetched generously and then cut by the priority rule.
const NEIGHBOR_FETCH_LIMIT: usize = 1000;
/// Abstracts in judge payloads are clipped to this many characters.
const JUDGE_ABSTRACT_CHARS: usize = 1200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub max_seed_papers: usize,
    pub expansion_depth: usize,
    pub per_seed_cap: usize,
    /// Cosine threshold in [-1, 1] for the coarse filter.
    pub coarse_similarity_threshold: f64,
    pub rerank_batch_size: usize,
    /// Ask the model for extra seed queries besides the topic itself.
    pub keyword_variants: bool,
    pub judge_retries: u32,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            max_seed_papers: 15,
            expansion_depth: 1,
            per_seed_cap: 20,
            coarse_similarity_threshold: 0.35,
            rerank_batch_size: 20,
            keyword_variants: true,
            judge_retries: 3,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_seed_papers == 0 || self.per_seed_cap == 0 || self.rerank_batch_size == 0 {
            return Err(Error::Config("retrieval caps must be positive".into()));
        }
        if !(-1.0..=1.0).contains(&self.coarse_similarity_threshold) {
            return Err(Error::Config(format!(
                "coarse_similarity_threshold {} outside [-1, 1]",
                self.coarse_similarity_threshold
            )));
        }
        Ok(())
    }
}

fn dedupe(records: impl IntoIterator<Item = PaperRecord>) -> Vec<PaperRecord> {
    let mut seen = BTreeSet::new();
    records
        .into_iter()
        .filter(|r| seen.insert(r.id.clone()))
        .collect()
}

/// Runs each query against `primary`, switching to `fallback` when the
/// primary fails, and keeps the first `max_seed_papers` distinct hits.
pub fn search_seeds(
    queries: &[String],
    cfg: &RetrievalConfig,
    primary: &dyn PaperSource,
    fallback: Option<&dyn PaperSource>,
    events: &EventLog,
) -> Result<Vec<PaperRecord>> {
    let queries: Vec<&String> = queries.iter().filter(|q| !q.trim().is_empty()).collect();
    if queries.is_empty() {
        return Err(Error::InvalidInput("topic must be non-empty".into()));
    }
    let mut hits = Vec::new();
    let mut failures = Vec::new();
    for q in &queries {
        match primary.search(q, cfg.max_seed_papers) {
            Ok(found) => hits.extend(found),
            Err(e) => {
                let Some(fb) = fallback else {
                    failures.push(format!("{}: {e}", primary.name()));
                    continue;
                };
                events.record(
                    STAGE,
                    EventKind::Fallback,
                    Some(q.as_str()),
                    format!("{} failed ({e}); searching {}", primary.name(), fb.name()),
                );
                match fb.search(q, cfg.max_seed_papers) {
                    Ok(found) => hits.extend(found),
                    Err(e2) => failures.push(format!("{}: {e}; {}: {e2}", primary.name(), fb.name())),
                }
            }
        }
    }
    if failures.len() == queries.len() {
        return Err(Error::Retrieval(format!(
            "seed search failed: {}",
            failures.join(" | ")
        )));
    }
    let mut seeds = dedupe(hits);
    seeds.truncate(cfg.max_seed_papers);
    for s in &mut seeds {
        s.normalize_citations();
    }
    Ok(seeds)
}

#[derive(Deserialize)]
struct Verdicts {
    verdicts: Vec<Verdict>,
}

#[derive(Deserialize)]
struct Verdict {
    paper_id: String,
    relevant: bool,
    #[serde(default)]
    note: String,
}

/// Parses a verdict list that must cover exactly the expected ids.
fn parse_verdicts(
    raw: &str,
    expected: &[PaperId],
) -> std::result::Result<BTreeMap<PaperId, (bool, String)>, String> {
    let v: Verdicts = parse_json(raw)?;
    let known: BTreeSet<&str> = expected.iter().map(PaperId::as_str).collect();
    let mut out = BTreeMap::new();
    for verdict in v.verdicts {
        let id = verdict.paper_id.trim();
        if !known.contains(id) {
            return Err(format!("verdict for unknown paper_id '{id}'"));
        }
        let pid = expected
            .iter()
            .find(|p| p.as_str() == id)
            .expect("checked above")
            .clone();
        out.insert(pid, (verdict.relevant, verdict.note));
    }
    let missing: Vec<&str> = expected
        .iter()
        .filter(|p| !out.contains_key(*p))
        .map(PaperId::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(format!("no verdict for paper_id {}", missing.join(", ")));
    }
    Ok(out)
}

fn judge_batch(
    ctx: &Context,
    tag: &'static str,
    instructions: &'static str,
    topic: &str,
    batch: &[PaperRecord],
    retries: u32,
) -> Result<BTreeMap<PaperId, (bool, String)>> {
    let papers: Vec<_> = batch
        .iter()
        .map(|p| {
            json!({
                "paper_id": p.id.as_str(),
                "title": p.title,
                "abstract": p.abstract_text.chars().take(JUDGE_ABSTRACT_CHARS).collect::<String>(),
            })
        })
        .collect();
    let prompt = Prompt::new(tag, instructions, json!({ "topic": topic, "papers": papers }));
    let ids: Vec<PaperId> = batch.iter().map(|p| p.id.clone()).collect();
    ctx.ask(
        &prompt,
        &CallSpec::new(tag, 0.0).max_retries(retries),
        &mut ErrorMemory::new(),
        |raw| parse_verdicts(raw, &ids),
    )
}

/// Keeps the candidates the judge marks as on-topic, in input order.
pub fn judge_filter(
    ctx: &Context,
    candidates: &[PaperRecord],
    topic: &str,
    cfg: &RetrievalConfig,
) -> Result<Vec<PaperRecord>> {
    filter_by_judge(ctx, candidates, topic, cfg, tags::SEED_JUDGE, prompts::SEED_JUDGE, false)
}

/// Fine-grained re-rank in batches; every retained paper gets a relevance
/// note in the event log.
pub fn llm_rerank_filter(
    ctx: &Context,
    papers: &[PaperRecord],
    topic: &str,
    cfg: &RetrievalConfig,
) -> Result<Vec<PaperRecord>> {
    filter_by_judge(ctx, papers, topic, cfg, tags::RERANK, prompts::RERANK, true)
}

fn filter_by_judge(
    ctx: &Context,
    papers: &[PaperRecord],
    topic: &str,
    cfg: &RetrievalConfig,
    tag: &'static str,
    instructions: &'static str,
    note_kept: bool,
) -> Result<Vec<PaperRecord>> {
    if papers.is_empty() {
        return Ok(Vec::new());
    }
    let batches: Vec<&[PaperRecord]> = papers.chunks(cfg.rerank_batch_size).collect();
    let results = parallel_map(ctx.workers, &batches, |b| {
        judge_batch(ctx, tag, instructions, topic, b, cfg.judge_retries)
    });
    let mut verdicts = BTreeMap::new();
    for r in results {
        verdicts.extend(r?);
    }
    let mut kept = Vec::new();
    for p in papers {
        let (relevant, note) = &verdicts[&p.id];
        if *relevant {
            if note_kept {
                ctx.events
                    .record(STAGE, EventKind::Relevance, Some(p.id.as_str()), note.clone());
            }
            kept.push(p.clone());
        } else {
            ctx.events.record(
                STAGE,
                EventKind::Skip,
                Some(p.id.as_str()),
                format!("judged off-topic by {tag}: {note}"),
            );
        }
    }
    Ok(kept)
}

/// Capped neighbor list of one paper: citing and cited papers, ordered by
/// citation count descending, then id.
fn neighbors(
    seed: &PaperRecord,
    cap: usize,
    source: &dyn PaperSource,
    events: &EventLog,
) -> Vec<PaperRecord> {
    let mut found: BTreeMap<PaperId, PaperRecord> = BTreeMap::new();
    for (kind, result) in [
        ("citations", source.citations(&seed.id, NEIGHBOR_FETCH_LIMIT)),
        ("references", source.references(&seed.id, NEIGHBOR_FETCH_LIMIT)),
    ] {
        match result {
            Ok(list) => found.extend(list.into_iter().map(|r| (r.id.clone(), r))),
            Err(e) => events.record(
                STAGE,
                EventKind::Skip,
                Some(seed.id.as_str()),
                format!("{kind} unavailable: {e}"),
            ),
        }
    }
    for id in seed.in_citations.iter().chain(&seed.out_citations) {
        if found.contains_key(id) {
            continue;
        }
        match source.lookup(id) {
            Ok(Some(rec)) => {
                found.insert(id.clone(), rec);
            }
            Ok(None) => events.record(STAGE, EventKind::Skip, Some(id.as_str()), "neighbor not found"),
            Err(e) => events.record(
                STAGE,
                EventKind::Skip,
                Some(id.as_str()),
                format!("neighbor unreachable: {e}"),
            ),
        }
    }
    found.remove(&seed.id);
    let mut list: Vec<PaperRecord> = found.into_values().collect();
    list.sort_by(|a, b| b.citation_count.cmp(&a.citation_count).then(a.id.cmp(&b.id)));
    list.truncate(cap);
    list
}

/// Breadth-first expansion over citations in both directions. Returns the
/// seeds followed by newly reached papers in discovery order.
pub fn expand_graph(
    seeds: &[PaperRecord],
    cfg: &RetrievalConfig,
    source: &dyn PaperSource,
    events: &EventLog,
    workers: usize,
) -> Vec<PaperRecord> {
    let mut out = dedupe(seeds.iter().cloned());
    let mut seen: BTreeSet<PaperId> = out.iter().map(|p| p.id.clone()).collect();
    let mut frontier = out.clone();
    for _ in 0..cfg.expansion_depth {
        let lists = parallel_map(workers, &frontier, |p| {
            neighbors(p, cfg.per_seed_cap, source, events)
        });
        let mut next = Vec::new();
        for n in lists.into_iter().flatten() {
            if seen.insert(n.id.clone()) {
                let mut n = n;
                n.normalize_citations();
                out.push(n.clone());
                next.push(n);
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    out
}

/// Keeps papers whose title+abstract embedding is within `threshold` cosine
/// of the topic embedding.
pub fn coarse_filter(
    ctx: &Context,
    papers: &[PaperRecord],
    topic: &str,
    threshold: f64,
) -> Result<Vec<PaperRecord>> {
    if papers.is_empty() {
        return Ok(Vec::new());
    }
    let mut texts = vec![topic.to_string()];
    texts.extend(papers.iter().map(PaperRecord::embedding_text));
    let vecs = ctx
        .gateway
        .embed(&texts)
        .map_err(|e| Error::Retrieval(format!("embedding failed: {e}")))?;
    let topic_vec = &vecs[0];
    let mut kept = Vec::new();
    for (p, v) in papers.iter().zip(&vecs[1..]) {
        let sim = cosine(topic_vec, v);
        if sim >= threshold {
            kept.push(p.clone());
        } else {
            ctx.events.record(
                STAGE,
                EventKind::Skip,
                Some(p.id.as_str()),
                format!("similarity {sim:.3} below {threshold}"),
            );
        }
    }
    Ok(kept)
}

#[derive(Deserialize)]
struct Queries {
    queries: Vec<String>,
}

/// Extra search queries proposed by the model; failures fall back to none.
pub fn keyword_variants(ctx: &Context, topic: &str) -> Vec<String> {
    let prompt = Prompt::new(tags::SEED_KEYWORDS, prompts::SEED_KEYWORDS, json!({ "topic": topic }));
    match ctx.ask(
        &prompt,
        &CallSpec::new(tags::SEED_KEYWORDS, 0.0).max_retries(1),
        &mut ErrorMemory::new(),
        parse_json::<Queries>,
    ) {
        Ok(q) => q
            .queries
            .into_iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty() && s != topic)
            .take(3)
            .collect(),
        Err(e) => {
            ctx.events.record(
                STAGE,
                EventKind::Fallback,
                None,
                format!("keyword variants unavailable ({e}); searching the topic only"),
            );
            Vec::new()
        }
    }
}

/// The whole stage. Seeds survive on the judge's word; graph neighbors must
/// pass both the coarse filter and the re-rank.
pub fn run_retrieval(
    ctx: &Context,
    topic: &str,
    cfg: &RetrievalConfig,
    primary: &dyn PaperSource,
    fallback: Option<&dyn PaperSource>,
) -> Result<Vec<PaperRecord>> {
    if topic.trim().is_empty() {
        return Err(Error::InvalidInput("topic must be non-empty".into()));
    }
    cfg.validate()?;
    let mut queries = vec![topic.to_string()];
    if cfg.keyword_variants {
        queries.extend(keyword_variants(ctx, topic));
    }
    let seeds = search_seeds(&queries, cfg, primary, fallback, &ctx.events)?;
    let seeds = judge_filter(ctx, &seeds, topic, cfg)?;
    if seeds.is_empty() {
        return Err(Error::Retrieval("no seed paper survived judging".into()));
    }
    let expanded = expand_graph(&seeds, cfg, primary, &ctx.events, ctx.workers);
    let neighbors: Vec<PaperRecord> = expanded[seeds.len()..].to_vec();
    let coarse = coarse_filter(ctx, &neighbors, topic, cfg.coarse_similarity_threshold)?;
    let fine = llm_rerank_filter(ctx, &coarse, topic, cfg)?;
    let mut out = seeds;
    out.extend(fine);
    tracing::info!(papers = out.len(), "retrieval finished");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, HashEmbedder, Reply, Rule, ScriptedBackend, TableEmbedder};
    use std::sync::Arc;

    fn rec(id: &str, cites: u64) -> PaperRecord {
        let mut r = PaperRecord::new(PaperId::graph(id), format!("Paper {id}"));
        r.citation_count = cites;
        r
    }

    struct Hits(Vec<PaperRecord>);

    impl PaperSource for Hits {
        fn name(&self) -> String {
            "hits".into()
        }
        fn search(&self, _: &str, _: usize) -> Result<Vec<PaperRecord>> {
            Ok(self.0.clone())
        }
        fn citations(&self, _: &PaperId, _: usize) -> Result<Vec<PaperRecord>> {
            Ok(vec![])
        }
        fn references(&self, _: &PaperId, _: usize) -> Result<Vec<PaperRecord>> {
            Ok(vec![])
        }
        fn lookup(&self, _: &PaperId) -> Result<Option<PaperRecord>> {
            Ok(None)
        }
    }

    fn ctx(backend: ScriptedBackend) -> (Context, Arc<ScriptedBackend>) {
        let b = Arc::new(backend);
        let g = Gateway::builder(b.clone(), Arc::new(HashEmbedder::new(32)))
            .build()
            .unwrap();
        (Context::new(Arc::new(g)), b)
    }

    fn verdicts(ids: &[&str], rejected: &[&str]) -> String {
        let v: Vec<_> = ids
            .iter()
            .map(|i| json!({"paper_id": i, "relevant": !rejected.contains(i), "note": "n"}))
            .collect();
        json!({ "verdicts": v }).to_string()
    }

    #[test]
    fn seeds_capped_and_deduplicated() {
        let cfg = RetrievalConfig::default();
        let mut hits: Vec<_> = (0..40).map(|i| rec(&format!("p{i:02}"), 0)).collect();
        hits.insert(1, rec("p00", 0));
        let seeds =
            search_seeds(&["t".into()], &cfg, &Hits(hits), None, &EventLog::new()).unwrap();
        assert_eq!(seeds.len(), 15);
        let few = search_seeds(
            &["t".into()],
            &cfg,
            &Hits((0..3).map(|i| rec(&i.to_string(), 0)).collect()),
            None,
            &EventLog::new(),
        )
        .unwrap();
        assert_eq!(few.len(), 3);
    }

    #[test]
    fn fallback_source_is_flagged() {
        let log = EventLog::new();
        let fb = Hits((0..5).map(|i| rec(&i.to_string(), 0)).collect());
        let seeds = search_seeds(
            &["t".into()],
            &RetrievalConfig::default(),
            &UnavailableSource,
            Some(&fb),
            &log,
        )
        .unwrap();
        assert_eq!(seeds.len(), 5);
        assert_eq!(log.of_kind(EventKind::Fallback).len(), 1);
        assert!(matches!(
            search_seeds(&["t".into()], &RetrievalConfig::default(), &UnavailableSource, None, &log),
            Err(Error::Retrieval(_))
        ));
    }

    #[test]
    fn judge_rejects_and_preserves_order() {
        let papers: Vec<_> = ["p1", "p2", "p3"].iter().map(|i| rec(i, 0)).collect();
        let (c, _) = ctx(ScriptedBackend::new()
            .with_rule(Rule::any().reply(verdicts(&["p1", "p2", "p3"], &["p2"]))));
        let kept = judge_filter(&c, &papers, "t", &RetrievalConfig::default()).unwrap();
        let ids: Vec<_> = kept.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, vec!["p1", "p3"]);
    }

    #[test]
    fn judge_retries_unparsable_output() {
        let papers: Vec<_> = ["p1", "p2"].iter().map(|i| rec(i, 0)).collect();
        let (c, b) = ctx(ScriptedBackend::new().with_rule(Rule::any().replies([
            Reply::text("I think they are fine"),
            Reply::text(verdicts(&["p1", "p2"], &[])),
        ])));
        let kept = judge_filter(&c, &papers, "t", &RetrievalConfig::default()).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(b.calls().len(), 2);
    }

    #[test]
    fn rerank_batches_of_twenty() {
        let papers: Vec<_> = (0..60).map(|i| rec(&format!("p{i:02}"), 0)).collect();
        let (c, b) = ctx(ScriptedBackend::new().with_fallback(|req| {
            let payload = crate::prompts::payload_of(&req.prompt).unwrap();
            let ids: Vec<String> = payload["papers"]
                .as_array()
                .unwrap()
                .iter()
                .map(|p| p["paper_id"].as_str().unwrap().to_string())
                .collect();
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            Ok(verdicts(&refs, &[]))
        }));
        let kept = llm_rerank_filter(&c, &papers, "t", &RetrievalConfig::default()).unwrap();
        assert_eq!(kept.len(), 60);
        assert_eq!(b.calls_tagged(tags::RERANK).len(), 3);
        assert_eq!(c.events.of_kind(EventKind::Relevance).len(), 60);
    }

    #[test]
    fn coarse_filter_drops_orthogonal_paper() {
        let mut near = rec("near", 0);
        near.title = "near".into();
        let mut far = rec("far", 0);
        far.title = "far".into();
        let emb = TableEmbedder::new(vec![
            ("topic".into(), vec![1.0, 0.0]),
            ("near".into(), vec![0.9, 0.1]),
            ("far".into(), vec![0.0, 1.0]),
        ]);
        let g = Gateway::builder(Arc::new(ScriptedBackend::new()), Arc::new(emb))
            .build()
            .unwrap();
        let c = Context::new(Arc::new(g));
        let kept = coarse_filter(&c, &[near.clone(), far.clone()], "topic", 0.5).unwrap();
        assert_eq!(kept, vec![near.clone()]);
        let all = coarse_filter(&c, &[near, far], "topic", -1.0).unwrap();
        assert_eq!(all.len(), 2);
        assert!(coarse_filter(&c, &[], "topic", 0.5).unwrap().is_empty());
    }

    fn star(n_in: usize, n_out: usize) -> FixtureSource {
        let mut seed = rec("seed", 0);
        let mut papers = Vec::new();
        for i in 0..n_in {
            let r = rec(&format!("in{i:02}"), i as u64);
            seed.in_citations.push(r.id.clone());
            papers.push(r);
        }
        for i in 0..n_out {
            let r = rec(&format!("out{i:02}"), (i % 3) as u64);
            seed.out_citations.push(r.id.clone());
            papers.push(r);
        }
        papers.push(seed);
        FixtureSource::new(papers)
    }

    #[test]
    fn expansion_depth_zero_is_identity() {
        let src = star(3, 3);
        let seed = src.lookup(&PaperId::graph("seed")).unwrap().unwrap();
        let cfg = RetrievalConfig {
            expansion_depth: 0,
            ..RetrievalConfig::default()
        };
        let out = expand_graph(std::slice::from_ref(&seed), &cfg, &src, &EventLog::new(), 1);
        assert_eq!(out, vec![seed]);
    }

    #[test]
    fn expansion_keeps_all_under_cap_and_cuts_by_priority() {
        let src = star(7, 5);
        let seed = src.lookup(&PaperId::graph("seed")).unwrap().unwrap();
        let out = expand_graph(&[seed], &RetrievalConfig::default(), &src, &EventLog::new(), 2);
        assert_eq!(out.len(), 13);

        let src = star(18, 12);
        let seed = src.lookup(&PaperId::graph("seed")).unwrap().unwrap();
        let out = expand_graph(&[seed], &RetrievalConfig::default(), &src, &EventLog::new(), 2);
        assert_eq!(out.len(), 21);
        // the 20 kept neighbors are the highest-cited ones
        let kept_min = out[1..].iter().map(|p| p.citation_count).min().unwrap();
        assert!(kept_min >= 2);
    }

    #[test]
    fn unreachable_neighbor_is_logged() {
        let mut seed = rec("seed", 0);
        seed.out_citations.push(PaperId::graph("ghost"));
        let src = FixtureSource::new(vec![rec("other", 0)]);
        let log = EventLog::new();
        let out = expand_graph(&[seed], &RetrievalConfig::default(), &src, &log, 1);
        assert_eq!(out.len(), 1);
        assert_eq!(log.of_kind(EventKind::Skip).len(), 1);
    }
}
