//! Acceptance suite. Runs every criterion, prints one PASS or FAIL line per
//! criterion and exits non-zero if any failed.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use surveyor_cli::checkpoint::Checkpoint;
use surveyor_cli::commands::{clear_cache, sidecar_path};
use surveyor_cli::{run, PipelineConfig, RunOptions, RunOutcome, Services};
use surveyor_core::code_analysis::{
    batch_code_report, check_trace, run_pseudocode_loop, CodeAnalysisConfig, PlannerOp, RepoSnapshot,
};
use surveyor_core::gateway::{
    compress_context, estimate_tokens, CompletionRequest, Gateway, HashEmbedder, RecordingSleeper, Rule,
    ScriptedBackend, TextBackend,
};
use surveyor_core::model::{EventKind, Granularity, KnowledgeSubstrate, PaperId, PaperRecord};
use surveyor_core::offline::OfflineBackend;
use surveyor_core::prompts::{payload_of, tags};
use surveyor_core::refinement::{run_refinement, RefinementConfig};
use surveyor_core::retrieval::{expand_graph, FixtureSource, RetrievalConfig};
use surveyor_core::writing::AssembledSurvey;
use surveyor_core::Context;
use surveyor_eval::{
    citation_precision, citation_recall, coefficient_of_variation, cohens_kappa, fleiss_kappa, valid_citation_ratio,
    weighted_content_score, ClaimRecord, ContentScores, NliVerdictTable, RatingMatrix,
};

// ---- shared helpers ----

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/rag")
}

/// The bundled offline configuration, writing under `out`.
fn fixture_config(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::load(&fixture_dir().join("surveyor.toml"))
        .expect("fixture config loads")
        .with_output_dir(out);
    cfg.workers = 1;
    cfg
}

/// Services from the configuration with the text backend swapped out.
fn services_with(cfg: &PipelineConfig, text: Arc<dyn TextBackend>) -> Services {
    let mut s = Services::from_config(cfg).expect("services build");
    s.text = text;
    s
}

/// Scripted backend answering everything the offline way unless a rule matches.
fn offline_scripted() -> ScriptedBackend {
    let offline = OfflineBackend::new();
    ScriptedBackend::new().with_fallback(move |req| offline.generate(req))
}

fn fixture_titles() -> BTreeMap<String, PaperId> {
    FixtureSource::load(&fixture_dir().join("papers.json"))
        .expect("fixture loads")
        .records()
        .map(|r| (r.title.clone(), r.id.clone()))
        .collect()
}

/// Every draft cites only papers assigned to its outline node (or, for a
/// section, to the node and its descendants).
fn assert_evidence_locality(s: &KnowledgeSubstrate) -> usize {
    let outline = s.outline.as_ref().expect("outline exists");
    for d in &s.drafts {
        if d.granularity == Granularity::Survey {
            continue;
        }
        let node = outline.find(&d.node_path).expect("draft path is in the outline");
        let allowed = node.assigned_union();
        let cited = d.cited_papers();
        assert!(
            cited.is_subset(&allowed),
            "draft {:?} cites {:?} outside {:?}",
            d.node_path,
            cited.difference(&allowed).collect::<Vec<_>>(),
            allowed
        );
    }
    s.drafts.len()
}

/// Valid-citation ratio of the assembled survey against the retrieved papers.
fn survey_citation_tally(out: &RunOutcome) -> (usize, usize, f64) {
    let survey = out.survey_path().expect("survey written");
    let text = std::fs::read_to_string(survey).unwrap();
    let bib = AssembledSurvey::read_citations(&sidecar_path(survey)).unwrap();
    let universe: BTreeSet<PaperId> = out.substrate.papers.keys().cloned().collect();
    let t = valid_citation_ratio(&text, &bib, &universe);
    (t.valid, t.total, t.ratio.value)
}

// ---- 1. weighted totals ----

fn weighted_totals() -> String {
    let started = Instant::now();
    let cases = [
        ((9.100, 8.356, 8.333), 8.644),
        ((9.083, 8.311, 8.450), 8.676),
        ((8.938, 8.417, 8.063), 8.483),
    ];
    let mut got = Vec::new();
    for ((c, w, d), expected) in cases {
        let t = weighted_content_score(&ContentScores::new(c, w, d).unwrap()).unwrap();
        assert!((t - expected).abs() <= 0.001, "({c}, {w}, {d}) gave {t}, expected {expected}");
        got.push(format!("{t:.4}"));
    }
    assert!(started.elapsed() < Duration::from_secs(1));
    format!("totals {}", got.join(", "))
}

// ---- 2. citation metrics against brute force ----

struct MetricInstance {
    refs: Vec<Vec<usize>>,
    /// Per claim, a verdict for every subset of its references by bitmask.
    verdicts: Vec<Vec<bool>>,
}

fn metric_instance(seed: u64) -> MetricInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut refs = Vec::new();
    let mut verdicts = Vec::new();
    for _ in 0..rng.gen_range(0..=6) {
        let k = rng.gen_range(1..=4usize);
        let mut pool: Vec<usize> = (1..=10).collect();
        refs.push((0..k).map(|_| pool.swap_remove(rng.gen_range(0..pool.len()))).collect::<Vec<_>>());
        verdicts.push((0..1usize << k).map(|m| m != 0 && rng.gen_bool(0.5)).collect());
    }
    MetricInstance { refs, verdicts }
}

/// Exact rationals straight from the definitions, enumerating subsets.
fn brute_force(inst: &MetricInstance) -> ((u64, u64), (u64, u64)) {
    let (mut rn, mut pn, mut pd) = (0, 0, 0);
    for (refs, h) in inst.refs.iter().zip(&inst.verdicts) {
        let full = (1usize << refs.len()) - 1;
        rn += h[full] as u64;
        for k in 0..refs.len() {
            pd += 1;
            // g(k) is 1 when k alone entails the claim or the rest without k does not.
            let g = h[1 << k] || !h[full & !(1 << k)];
            pn += (h[full] && g) as u64;
        }
    }
    ((rn, inst.refs.len() as u64), (pn, pd))
}

fn as_f64((n, d): (u64, u64)) -> f64 {
    if d == 0 {
        1.0
    } else {
        n as f64 / d as f64
    }
}

fn metric_oracle() -> String {
    let started = Instant::now();
    for seed in 0..1000u64 {
        let inst = metric_instance(seed);
        let mut table = NliVerdictTable::new();
        let mut claims = Vec::new();
        for (i, refs) in inst.refs.iter().enumerate() {
            for (mask, v) in inst.verdicts[i].iter().enumerate().skip(1) {
                let subset = refs.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, r)| *r);
                table.insert(i, subset, *v);
            }
            claims.push(ClaimRecord {
                claim_id: i,
                text: format!("claim {i}"),
                refs: refs.clone(),
            });
        }
        let (r, p) = brute_force(&inst);
        let got_r = citation_recall(&claims, &table).unwrap().value;
        let got_p = citation_precision(&claims, &table).unwrap().value;
        assert!((got_r - as_f64(r)).abs() <= 1e-12, "recall, seed {seed}");
        assert!((got_p - as_f64(p)).abs() <= 1e-12, "precision, seed {seed}");
    }
    let took = started.elapsed();
    assert!(took < Duration::from_secs(10));
    "1000 instances agree".into()
}

// ---- 3. agreement statistics ----

fn kappa() -> String {
    let started = Instant::now();
    let same = ["A", "B", "B", "C", "A"];
    assert_eq!(cohens_kappa(&same, &same).unwrap(), 1.0);
    // Observed agreement 1/2 and chance agreement 1/2 give zero.
    let k0 = cohens_kappa(&["A", "A", "B", "B"], &["A", "B", "A", "B"]).unwrap();
    assert!(k0.abs() < 1e-12, "fixture kappa {k0}");

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..100 {
        let n = rng.gen_range(2..30);
        let a: Vec<u8> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let b: Vec<u8> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        assert_eq!(cohens_kappa(&a, &b).unwrap(), cohens_kappa(&b, &a).unwrap());
    }

    let labels = ["A", "B", "Tie"];
    let unanimous: Vec<Vec<&str>> = (0..30).map(|i| vec![labels[i % 3]; 3]).collect();
    assert_eq!(fleiss_kappa(&RatingMatrix::from_labels(&unanimous, &labels).unwrap()).unwrap(), 1.0);
    let uniform: Vec<Vec<&str>> = (0..10_000)
        .map(|_| (0..3).map(|_| labels[rng.gen_range(0..3)]).collect())
        .collect();
    let kf = fleiss_kappa(&RatingMatrix::from_labels(&uniform, &labels).unwrap()).unwrap();
    assert!(kf.abs() <= 0.05, "uniform-label Fleiss kappa {kf}");
    assert!(started.elapsed() < Duration::from_secs(10));
    format!("uniform Fleiss kappa {kf:+.4}")
}

// ---- 4. coefficient of variation ----

fn cv() -> String {
    assert_eq!(coefficient_of_variation(&[7.5; 6]).unwrap().cv_percent, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let xs: Vec<f64> = (0..rng.gen_range(2..12)).map(|_| rng.gen_range(1.0..10.0)).collect();
        let k = rng.gen_range(0.01..100.0);
        let scaled: Vec<f64> = xs.iter().map(|x| x * k).collect();
        let a = coefficient_of_variation(&xs).unwrap().cv_percent;
        let b = coefficient_of_variation(&scaled).unwrap().cv_percent;
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }
    let pair = coefficient_of_variation(&[8.0, 10.0]).unwrap().cv_percent;
    assert!((pair - 15.713).abs() < 5e-4, "cv of {{8, 10}} is {pair}");
    format!("cv{{8,10}} = {pair:.3}%")
}

// ---- 5. graph expansion ----

fn paper(n: usize) -> PaperId {
    PaperId::parse(&format!("2402.{n:05}")).unwrap()
}

fn expansion() -> String {
    let cfg = RetrievalConfig::default();
    assert_eq!(cfg.max_seed_papers, 15);
    assert_eq!(cfg.per_seed_cap, 20);
    assert_eq!(cfg.expansion_depth, 1);
    let mut capped_seeds = 0;
    for graph_seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(graph_seed);
        let n = 300;
        let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
        for s in 0..n {
            // Seeds get heavy degrees so the cap binds on some of them.
            let degree = if s < 15 { rng.gen_range(5..45) } else { rng.gen_range(0..4) };
            for _ in 0..degree {
                let t = rng.gen_range(0..n);
                if t != s {
                    edges.insert((s, t));
                }
            }
        }
        let counts: Vec<u64> = (0..n).map(|_| rng.gen_range(0..50)).collect();
        let records: Vec<PaperRecord> = (0..n)
            .map(|i| {
                let mut r = PaperRecord::new(paper(i), format!("paper {i}"));
                r.citation_count = counts[i];
                r.out_citations = edges.iter().filter(|(s, _)| *s == i).map(|(_, t)| paper(*t)).collect();
                r
            })
            .collect();
        let source = FixtureSource::new(records.clone());
        let seeds: Vec<PaperRecord> = records[..15].to_vec();

        // Brute force: union of each seed's capped, ordered neighbour set.
        let mut expected: BTreeSet<PaperId> = seeds.iter().map(|s| s.id.clone()).collect();
        for s in 0..15 {
            let mut nb: Vec<usize> = (0..n)
                .filter(|t| *t != s && (edges.contains(&(s, *t)) || edges.contains(&(*t, s))))
                .collect();
            nb.sort_by(|a, b| counts[*b].cmp(&counts[*a]).then(paper(*a).cmp(&paper(*b))));
            if nb.len() > cfg.per_seed_cap {
                capped_seeds += 1;
            }
            expected.extend(nb.into_iter().take(cfg.per_seed_cap).map(paper));
        }

        let events = surveyor_core::model::EventLog::new();
        let first = expand_graph(&seeds, &cfg, &source, &events, 4);
        let again = expand_graph(&seeds, &cfg, &source, &events, 1);
        let ids: Vec<PaperId> = first.iter().map(|p| p.id.clone()).collect();
        assert_eq!(ids, again.iter().map(|p| p.id.clone()).collect::<Vec<_>>(), "non-deterministic");
        assert_eq!(&ids[..15], seeds.iter().map(|s| s.id.clone()).collect::<Vec<_>>().as_slice());
        let got: BTreeSet<PaperId> = ids.iter().cloned().collect();
        assert_eq!(got.len(), ids.len(), "duplicates in expansion");
        assert_eq!(got, expected, "graph {graph_seed}");
    }
    assert!(capped_seeds > 0, "no seed exceeded the cap");
    format!("20 graphs match; cap bound on {capped_seeds} seeds")
}

// ---- 6. end-to-end offline run ----

fn end_to_end() -> String {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path());
    let started = Instant::now();
    let out = run(&cfg, Services::from_config(&cfg).unwrap(), RunOptions::default()).expect("pipeline runs");
    let took = started.elapsed();
    assert!(took < Duration::from_secs(60));
    assert_eq!(out.substrate.papers.len(), 12, "retrieval should keep the twelve on-topic papers");
    assert_eq!(out.manifest.stages_run.len(), 5);
    let (valid, total, ratio) = survey_citation_tally(&out);
    assert!(total > 0);
    assert_eq!(ratio, 1.0, "{valid}/{total} citations valid");
    let text = std::fs::read_to_string(out.survey_path().unwrap()).unwrap();
    assert!(surveyor_core::model::mark_spans(&text).is_empty(), "unresolved marks remain");
    let units = assert_evidence_locality(&out.substrate);
    format!("{units} draft units, {valid}/{total} citations valid, {:.2}s", took.as_secs_f64())
}

// ---- 7. citation verification loop ----

fn citation_retry() -> String {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config(dir.path());
    cfg.stages.refinement = false;
    let titles = fixture_titles();
    let injected: Arc<Mutex<Option<(Value, String)>>> = Arc::default();
    let inj = injected.clone();
    let offline = OfflineBackend::new();
    let backend = Arc::new(offline_scripted().with_rule(Rule::tag(tags::DRAFT_SUBSECTION).respond_with(
        move |req: &CompletionRequest| {
            let reply = offline.generate(req)?;
            let mut slot = inj.lock().unwrap();
            if slot.is_some() {
                return Ok(reply);
            }
            let p = payload_of(&req.prompt).expect("payload");
            let allowed: BTreeSet<&str> = p["allowed_keys"].as_array().unwrap().iter().filter_map(Value::as_str).collect();
            let outside = titles.keys().find(|t| !allowed.contains(t.as_str())).expect("an unassigned title").clone();
            *slot = Some((p["node"]["path"].clone(), outside.clone()));
            Ok(format!("{reply} The same idea also appears in <{outside}>."))
        },
    )));
    let out = run(&cfg, services_with(&cfg, backend.clone()), RunOptions::default()).expect("pipeline runs");
    let (path, key) = injected.lock().unwrap().clone().expect("injection happened");
    let for_node: Vec<CompletionRequest> = backend
        .calls_tagged(tags::DRAFT_SUBSECTION)
        .into_iter()
        .filter(|r| payload_of(&r.prompt).map(|p| p["node"]["path"] == path).unwrap_or(false))
        .collect();
    assert_eq!(for_node.len(), 2, "exactly one retry for the node");
    assert!(for_node[1].prompt.contains(&format!("<{key}>")), "retry prompt carries the offending key");
    // Leaf nodes, sections without subsections included, use the subsection prompt.
    let leaves = out
        .substrate
        .outline
        .as_ref()
        .unwrap()
        .nodes()
        .iter()
        .filter(|(_, n)| n.children.is_empty())
        .count();
    assert_eq!(backend.calls_tagged(tags::DRAFT_SUBSECTION).len(), leaves + 1);
    let (_, total, ratio) = survey_citation_tally(&out);
    assert_eq!(ratio, 1.0);
    let text = std::fs::read_to_string(out.survey_path().unwrap()).unwrap();
    assert!(!text.contains(&format!("<{key}>")));
    let offending = fixture_titles()[&key].clone();
    let node = out.substrate.outline.as_ref().unwrap().find(path_of(&path).as_slice()).unwrap().clone();
    assert!(!node.assigned_papers.contains(&offending));
    let unit = out.substrate.drafts.iter().find(|d| d.node_path == path_of(&path)).unwrap();
    assert!(!unit.cited_papers().contains(&offending), "the final draft kept the out-of-set citation");
    assert_evidence_locality(&out.substrate);
    format!("1 retry on {path}, {total} citations all valid")
}

fn path_of(v: &Value) -> Vec<String> {
    v.as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
}

// ---- 8. refinement bounds and safety ----

/// Drafted substrate with refinement left to the caller.
fn drafted_substrate(dir: &Path) -> KnowledgeSubstrate {
    let mut cfg = fixture_config(dir);
    cfg.stages.refinement = false;
    run(&cfg, Services::from_config(&cfg).unwrap(), RunOptions::default())
        .expect("pipeline runs")
        .substrate
}

fn survey_only() -> RefinementConfig {
    let mut cfg = RefinementConfig::default();
    cfg.subsection.enabled = false;
    cfg.section.enabled = false;
    cfg
}

fn scripted_ctx(b: Arc<ScriptedBackend>) -> Context {
    let g = Gateway::builder(b, Arc::new(HashEmbedder::new(64))).build().unwrap();
    Context::new(Arc::new(g)).with_workers(1)
}

fn refinement_bounds() -> String {
    let dir = tempfile::tempdir().unwrap();
    let base = drafted_substrate(dir.path());
    let cfg = survey_only();
    assert_eq!(cfg.survey.max_rounds, 5);

    // A planner that never finishes.
    let stuck = Arc::new(offline_scripted().with_rule(
        Rule::tag(tags::REFINE_PLANNER).reply(r#"{"plan": [{"skill": "review"}]}"#),
    ));
    let ctx = scripted_ctx(stuck.clone());
    let mut s = base.clone();
    run_refinement(&ctx, &mut s, Default::default(), &cfg).expect("refinement runs");
    let rounds = stuck.calls_tagged(tags::REFINE_PLANNER).len();
    assert_eq!(rounds, 5, "planner rounds");
    assert_eq!(ctx.events.of_kind(EventKind::Exhaustion).len(), 1);

    // A reviser that cites a paper outside the survey.
    let breaker = Arc::new(offline_scripted().with_rule(Rule::tag(tags::REFINE_REVISE).respond_with(
        |req: &CompletionRequest| {
            let p = payload_of(&req.prompt).expect("payload");
            Ok(format!("{} See also <A Paper Nobody Retrieved>.", p["text"].as_str().unwrap_or_default()))
        },
    )));
    let ctx = scripted_ctx(breaker.clone());
    let mut s = base.clone();
    run_refinement(&ctx, &mut s, Default::default(), &cfg).expect("refinement runs");
    assert!(!breaker.calls_tagged(tags::REFINE_REVISE).is_empty(), "revise was attempted");
    assert!(!ctx.events.of_kind(EventKind::Rejection).is_empty(), "rejection logged");
    assert_eq!(s.drafts, base.drafts, "prior text retained");
    format!(
        "planner stopped after {rounds} rounds; {} bad revisions rejected",
        breaker.calls_tagged(tags::REFINE_REVISE).len()
    )
}

// ---- 9. code-analysis loop legality ----

fn code_loop() -> String {
    let cfg = CodeAnalysisConfig::default();
    assert_eq!(cfg.max_rounds, 10);
    assert_eq!(cfg.min_reads, 3);
    let repo = RepoSnapshot::from_dir(paper(1), &fixture_dir().join("repos/rag-jointly")).unwrap();
    let plan = |ops: &[&str]| {
        let steps: Vec<Value> = ops
            .iter()
            .map(|o| match o.split_once(':') {
                Some((op, path)) => serde_json::json!({"op": op, "path": path, "rationale": "trace"}),
                None => serde_json::json!({"op": o, "rationale": "trace"}),
            })
            .collect();
        serde_json::json!({ "plan": steps }).to_string()
    };
    let reads = ["get_source_code:index.py", "get_source_code:encode.py", "get_source_code:train.py"];

    // Creating before three reads is refused.
    let mut legal = reads.to_vec();
    legal.extend(["create", "finish"]);
    let b = Arc::new(
        offline_scripted().with_rule(Rule::tag(tags::CODE_PLANNER).replies([
            surveyor_core::gateway::Reply::text(plan(&["create"])),
            surveyor_core::gateway::Reply::text(plan(&legal)),
        ])),
    );
    let ctx = scripted_ctx(b.clone());
    let run1 = run_pseudocode_loop(&ctx, &repo, &cfg).unwrap();
    check_trace(&run1.trail, cfg.min_reads, cfg.revise_every).unwrap();
    let first_create = run1
        .trail
        .iter()
        .position(|t| t.op == PlannerOp::Create && t.accepted)
        .unwrap();
    let reads_before = run1.trail[..first_create]
        .iter()
        .filter(|t| t.accepted && matches!(t.op, PlannerOp::GetSourceCode { .. }))
        .count();
    assert!(
        run1.trail[..first_create].iter().any(|t| t.op == PlannerOp::Create && !t.accepted),
        "the early create was not refused"
    );
    assert!(reads_before >= 3, "create after {reads_before} reads");

    // Idle rounds after creation force a revise within the cadence.
    let mut idle = reads.to_vec();
    idle.extend(["create", "review", "review", "review", "review", "review", "review"]);
    let b = Arc::new(offline_scripted().with_rule(Rule::tag(tags::CODE_PLANNER).reply(plan(&idle))));
    let ctx = scripted_ctx(b.clone());
    let run2 = run_pseudocode_loop(&ctx, &repo, &cfg).unwrap();
    check_trace(&run2.trail, cfg.min_reads, cfg.revise_every).unwrap();
    let create_round = run2.trail.iter().find(|t| t.op == PlannerOp::Create).unwrap().round;
    let first_revise = run2.trail.iter().find(|t| t.op == PlannerOp::Revise).expect("a revise").round;
    assert!(first_revise - create_round <= 4, "revise at {first_revise} after create at {create_round}");
    assert!(!run2.finished);
    assert_eq!(run2.rounds, 10, "round cap");
    assert_eq!(ctx.events.of_kind(EventKind::Exhaustion).len(), 1);

    // Batch reports: one call per five pseudocode entries.
    for n in [1usize, 4, 5, 6, 10, 11, 23] {
        let b = Arc::new(offline_scripted());
        let ctx = scripted_ctx(b.clone());
        let pseudo: Vec<(PaperId, String)> = (0..n).map(|i| (paper(i + 1), format!("PROC step{i}"))).collect();
        batch_code_report(&ctx, &pseudo, "retrieval", &cfg).unwrap();
        assert_eq!(b.calls_tagged(tags::CODE_BATCH_REPORT).len(), n.div_ceil(5), "n = {n}");
    }
    format!(
        "first create after {reads_before} reads; forced revise at round {first_revise}; cap {} rounds",
        run2.rounds
    )
}

// ---- 10. gateway behaviour and resume ----

fn gateway_and_resume() -> String {
    // Retry schedule on a persistent 429.
    let limited = Arc::new(ScriptedBackend::new().with_rule(Rule::any().reply_status(429)));
    let sleeper = Arc::new(RecordingSleeper::new());
    let g = Gateway::builder(limited.clone(), Arc::new(HashEmbedder::new(8)))
        .sleeper(sleeper.clone())
        .build()
        .unwrap();
    assert!(g.complete(&CompletionRequest::new("t", "rate limited")).is_err());
    assert_eq!(limited.calls().len(), 10);
    let delays = sleeper.delays();
    assert!(delays.windows(2).all(|w| w[0] <= w[1]));
    assert!(delays.iter().all(|d| (1.0..=300.0).contains(&d.as_secs_f64())));

    // Cache.
    let counted = Arc::new(ScriptedBackend::new().with_rule(Rule::any().reply("same")));
    let g = Gateway::builder(counted.clone(), Arc::new(HashEmbedder::new(8))).build().unwrap();
    let req = CompletionRequest::new("t", "identical");
    assert_eq!(g.complete(&req).unwrap(), g.complete(&req).unwrap());
    assert_eq!(counted.calls().len(), 1);

    // Compression stays within budget and is idempotent.
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..500 {
        let word = |rng: &mut ChaCha8Rng| ["alpha", "beta", "gamma", "deltas", "é"][rng.gen_range(0..5)];
        let core: String = (0..rng.gen_range(0..30)).map(|_| format!("{} ", word(&mut rng))).collect();
        let aux: String = (0..rng.gen_range(0..200)).map(|_| format!("{} ", word(&mut rng))).collect();
        let budget = estimate_tokens(&core) + rng.gen_range(0..80);
        let c = compress_context(&core, &aux, budget).unwrap();
        assert!(estimate_tokens(&c.text) <= budget);
        let again = compress_context(&core, &c.aux_kept, budget).unwrap();
        assert_eq!(again.text, c.text);
    }

    // Resume after a full run makes no backend calls at all.
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path());
    run(&cfg, Services::from_config(&cfg).unwrap(), RunOptions::default()).unwrap();
    let calls = Arc::new(AtomicUsize::new(0));
    let c2 = calls.clone();
    let offline = OfflineBackend::new();
    let counting = Arc::new(ScriptedBackend::new().with_fallback(move |r| {
        c2.fetch_add(1, Ordering::SeqCst);
        offline.generate(r)
    }));
    let again = run(&cfg, services_with(&cfg, counting), RunOptions { resume: true }).unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), 0);
    assert_eq!(again.manifest.stats.transport_calls, 0);
    assert_eq!(again.manifest.stats.embed_calls, 0);
    assert_eq!(again.manifest.stages_resumed.len(), 5);

    // An interruption after analysis: only the remaining stages call out.
    let cp_path = cfg.checkpoint_path();
    let mut cp = Checkpoint::load(&cp_path).unwrap().unwrap();
    cp.completed_stages.truncate(3);
    cp.save(&cp_path).unwrap();
    clear_cache(&cfg.cache_dir()).unwrap();
    let tagged = Arc::new(offline_scripted());
    let partial = run(&cfg, services_with(&cfg, tagged.clone()), RunOptions { resume: true }).unwrap();
    let early = [tags::SEED_KEYWORDS, tags::SEED_JUDGE, tags::RERANK, tags::KEYNOTE, tags::CLUSTER_DESIGN, tags::RELATION_GRAPH];
    for t in early {
        assert!(tagged.calls_tagged(t).is_empty(), "completed stage re-ran ({t})");
    }
    assert!(!tagged.calls_tagged(tags::DRAFT_SUBSECTION).is_empty());
    assert_eq!(partial.manifest.stages_resumed.len(), 3);
    format!(
        "10 attempts, {} delays in [1, 300] s; resume made 0 calls",
        delays.len()
    )
}

type Criterion = (&'static str, fn() -> String);

fn main() {
    let criteria: [Criterion; 10] = [
        ("weighted content total reproduces reported scores", weighted_totals),
        ("citation recall and precision match brute force", metric_oracle),
        ("Cohen and Fleiss kappa", kappa),
        ("coefficient of variation", cv),
        ("depth-1 citation graph expansion with caps", expansion),
        ("offline end-to-end run on the twelve-paper fixture", end_to_end),
        ("out-of-set citation triggers exactly one retry", citation_retry),
        ("refinement round cap and revision rejection", refinement_bounds),
        ("code-analysis loop legality and batching", code_loop),
        ("gateway retry, cache, compression and resume", gateway_and_resume),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check));
        let ms = started.elapsed().as_millis();
        match result {
            Ok(detail) => println!("criterion {:>2}: PASS  {name} ({detail}; {ms} ms)", i + 1),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("criterion {:>2}: FAIL  {name} ({msg})", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
