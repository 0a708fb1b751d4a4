use std::sync::Arc;

use serde_json::{json, Value};

use super::*;
use crate::gateway::{BackendProfile, Gateway, HashEmbedder, Reply, Rule, ScriptedBackend};
use crate::model::{EventKind, PaperRecord};
use crate::prompts::{payload_of, tags};

fn ctx_profile(backend: ScriptedBackend, profile: BackendProfile) -> (Context, Arc<ScriptedBackend>) {
    let b = Arc::new(backend);
    let g = Gateway::builder(b.clone(), Arc::new(HashEmbedder::new(16)))
        .profile(profile)
        .build()
        .unwrap();
    (Context::new(Arc::new(g)), b)
}

fn ctx(backend: ScriptedBackend) -> (Context, Arc<ScriptedBackend>) {
    ctx_profile(backend, BackendProfile::default())
}

fn pid(s: &str) -> PaperId {
    PaperId::parse(s).unwrap()
}

fn repo() -> RepoSnapshot {
    RepoSnapshot::new(
        pid("p1"),
        [
            ("main.py", "def main():\n    train()\n"),
            ("model.py", "class Net:\n    pass\n"),
            ("train.py", "def train():\n    loop()\n"),
            ("utils.py", "def loop():\n    pass\n"),
            ("requirements.txt", "torch==2.1\n"),
        ]
        .map(|(a, b)| (a.to_string(), b.to_string())),
    )
    .unwrap()
}

fn step(op: &str) -> Value {
    match op.split_once(':') {
        Some((o, p)) => json!({"op": o, "path": p, "rationale": "r"}),
        None => json!({"op": op, "rationale": "r"}),
    }
}

fn plan(ops: &[&str]) -> Reply {
    Reply::text(json!({ "plan": ops.iter().map(|o| step(o)).collect::<Vec<_>>() }).to_string())
}

const READS: [&str; 3] = ["get_source_code:main.py", "get_source_code:model.py", "get_source_code:train.py"];

fn with_workers(plans: Vec<Reply>) -> ScriptedBackend {
    ScriptedBackend::new()
        .with_rule(Rule::tag(tags::CODE_PLANNER).replies(plans))
        .with_rule(Rule::tag(tags::CODE_CREATE).reply("PROCEDURE Main\n  CALL Train"))
        .with_rule(Rule::tag(tags::CODE_REVISE).reply("PROCEDURE Main\n  CALL Train  // revised"))
        .with_rule(Rule::tag(tags::CODE_REVIEW).reply(
            json!({"conciseness": 7, "logical_structure": 8, "implementation_specificity": 6,
                   "suggestions": ["name the loss"]})
            .to_string(),
        ))
}

fn ops_of(run: &PseudocodeRun) -> Vec<String> {
    run.trail.iter().map(|s| s.op.to_string()).collect()
}

#[test]
fn minimal_legal_trace_ends_at_round_six() {
    let mut ops = READS.to_vec();
    ops.extend(["create", "review", "finish"]);
    let (c, _) = ctx(with_workers(vec![plan(&ops)]));
    let cfg = CodeAnalysisConfig::default();
    let run = run_pseudocode_loop(&c, &repo(), &cfg).unwrap();
    assert!(run.finished);
    assert_eq!(run.rounds, 6);
    assert!(!run.pseudocode.is_empty());
    assert_eq!(run.reviews.len(), 1);
    check_trace(&run.trail, cfg.min_reads, cfg.revise_every).unwrap();
    assert!(c.events.of_kind(EventKind::Exhaustion).is_empty());
}

#[test]
fn early_create_is_rejected_then_legal_trace_succeeds() {
    let mut ops = READS.to_vec();
    ops.extend(["create", "finish"]);
    let (c, b) = ctx(with_workers(vec![plan(&["create", "review"]), plan(&ops)]));
    let cfg = CodeAnalysisConfig::default();
    let run = run_pseudocode_loop(&c, &repo(), &cfg).unwrap();
    assert!(!run.trail[0].accepted);
    assert_eq!(run.trail[0].round, 1);
    // the rejection aborted the rest of the first sub-plan
    assert_eq!(run.trail[1].op.to_string(), "get_source_code(main.py)");
    assert!(run.finished);
    assert_eq!(run.rounds, 6);
    assert_eq!(c.events.of_kind(EventKind::Rejection).len(), 1);
    let second = &b.calls_tagged(tags::CODE_PLANNER)[1];
    assert!(second.prompt.contains("at least 3 source files"));
    check_trace(&run.trail, cfg.min_reads, cfg.revise_every).unwrap();
}

#[test]
fn revise_is_injected_after_three_idle_rounds() {
    let mut ops = READS.to_vec();
    ops.extend(["create", "review", "review", "review", "review", "finish"]);
    let (c, _) = ctx(with_workers(vec![plan(&ops)]));
    let cfg = CodeAnalysisConfig::default();
    let run = run_pseudocode_loop(&c, &repo(), &cfg).unwrap();
    // create at round 4, three reviews, the fourth post-create round is the forced revise
    let forced = &run.trail[7];
    assert_eq!(forced.round, 8);
    assert_eq!(forced.op, PlannerOp::Revise);
    assert!(forced.forced);
    assert_eq!(ops_of(&run)[8..], ["review", "finish"]);
    assert!(run.finished);
    assert_eq!(run.rounds, 10);
    assert!(run.pseudocode.ends_with("// revised"));
    check_trace(&run.trail, cfg.min_reads, cfg.revise_every).unwrap();
}

#[test]
fn exhaustion_returns_latest_pseudocode() {
    let mut first = READS.to_vec();
    first.push("create");
    let (c, _) = ctx(with_workers(vec![plan(&first), plan(&["review"])]));
    let cfg = CodeAnalysisConfig::default();
    let run = run_pseudocode_loop(&c, &repo(), &cfg).unwrap();
    assert!(!run.finished);
    assert_eq!(run.rounds, cfg.max_rounds);
    assert!(!run.pseudocode.is_empty());
    assert_eq!(c.events.of_kind(EventKind::Exhaustion).len(), 1);
    check_trace(&run.trail, cfg.min_reads, cfg.revise_every).unwrap();
}

#[test]
fn malformed_plan_and_missing_file() {
    let mut ops = READS.to_vec();
    ops.extend(["create", "finish"]);
    let (c, b) = ctx(with_workers(vec![
        Reply::text(json!({"plan": [{"op": "explode"}]}).to_string()),
        plan(&["get_source_code:nope.py"]),
        plan(&ops),
    ]));
    let run = run_pseudocode_loop(&c, &repo(), &CodeAnalysisConfig::default()).unwrap();
    assert!(run.finished);
    assert!(!run.trail[0].accepted);
    assert!(run.trail[0].note.contains("does not exist"));
    assert_eq!(b.calls_tagged(tags::CODE_PLANNER).len(), 3);
}

#[test]
fn traversal_path_in_plan_is_malformed() {
    assert!(parse_plan(&json!({"plan": [step("get_source_code:../x")]}).to_string()).is_err());
    assert!(parse_plan(r#"{"plan": []}"#).is_err());
    let p = parse_plan(&json!({"plan": [step("get_source_code:src/a.py"), step("finish")]}).to_string()).unwrap();
    assert_eq!(p[0].op, PlannerOp::GetSourceCode { path: "src/a.py".into() });
}

#[test]
fn review_scores_out_of_range_rejected() {
    assert!(PseudocodeReview::parse(
        r#"{"conciseness": 11, "logical_structure": 1, "implementation_specificity": 1}"#
    )
    .is_err());
    assert!(PseudocodeReview::parse(
        r#"{"conciseness": 10, "logical_structure": 0, "implementation_specificity": 5, "suggestions": []}"#
    )
    .is_ok());
}

#[test]
fn memory_stays_under_threshold() {
    let big = "x = compute_something_long(a, b, c)\n".repeat(400);
    let files: Vec<(String, String)> = (0..6).map(|i| (format!("f{i}.py"), big.clone())).collect();
    let repo = RepoSnapshot::new(pid("p1"), files).unwrap();
    let reads: Vec<String> = (0..6).map(|i| format!("get_source_code:f{i}.py")).collect();
    let mut ops: Vec<&str> = reads.iter().map(String::as_str).collect();
    ops.truncate(3);
    let plans: Vec<Reply> = ops.iter().map(|o| plan(&[o])).chain([plan(&["create", "finish"])]).collect();
    let (c, _) = ctx(with_workers(plans));
    let cfg = CodeAnalysisConfig {
        memory_threshold: 300,
        ..Default::default()
    };
    let run = run_pseudocode_loop(&c, &repo, &cfg).unwrap();
    assert!(run.finished);
    assert!(run.peak_memory_tokens <= cfg.memory_threshold);
    assert!(!c.events.of_kind(EventKind::Compression).is_empty());
}

#[test]
fn loop_memory_compress_elides_then_drops() {
    let mut m = LoopMemory::default();
    for i in 0..20 {
        m.push_for_test(format!("round {i}: read"), "y".repeat(400));
    }
    assert!(m.compress(200));
    assert!(m.tokens() <= 200);
    // oldest bodies go first; the newest one survives
    assert!(m.render().starts_with("round 0: read\nround 1: read\n"));
    assert!(m.render().ends_with(&format!("{}\n", "y".repeat(400))));
    assert!(m.compress(5));
    assert!(m.render().starts_with('('));
}

#[test]
fn empty_repo_and_zero_rounds_rejected() {
    let (c, _) = ctx(ScriptedBackend::new());
    let empty = RepoSnapshot::new(pid("p1"), Vec::<(String, String)>::new()).unwrap();
    assert!(matches!(
        run_pseudocode_loop(&c, &empty, &CodeAnalysisConfig::default()),
        Err(Error::Precondition(_))
    ));
    let cfg = CodeAnalysisConfig {
        max_rounds: 0,
        ..Default::default()
    };
    assert!(run_pseudocode_loop(&c, &repo(), &cfg).is_err());
}

// ---- reports ----

fn report_backend() -> ScriptedBackend {
    ScriptedBackend::new()
        .with_rule(Rule::tag(tags::CODE_BATCH_REPORT).respond_with(|req| {
            let ids = payload_of(&req.prompt).unwrap()["paper_ids"].clone();
            let first = ids[0].as_str().unwrap().to_string();
            Ok(format!("Batch uses a planner loop <{first}>. Odd claim <q9>."))
        }))
        .with_rule(Rule::tag(tags::CODE_MERGE).reply("merged <c0>"))
        .with_rule(Rule::tag(tags::CODE_INTEGRATE).reply("Integrated report <c0>."))
}

fn pseudo(n: usize) -> Vec<(PaperId, String)> {
    (0..n).map(|i| (pid(&format!("c{i}")), format!("PROC {i}"))).collect()
}

#[test]
fn batch_counts_follow_ceiling_of_n_over_five() {
    for (n, batches) in [(1usize, 1usize), (5, 1), (12, 3)] {
        let (c, b) = ctx(report_backend());
        let out = batch_code_report(&c, &pseudo(n), "topic", &CodeAnalysisConfig::default()).unwrap();
        assert!(!out.is_empty());
        let calls = b.calls_tagged(tags::CODE_BATCH_REPORT);
        assert_eq!(calls.len(), batches, "n = {n}");
        assert_eq!(calls.len(), n.div_ceil(5));
        assert_eq!(b.calls_tagged(tags::CODE_INTEGRATE).len(), 1);
        assert!(b.calls_tagged(tags::CODE_MERGE).is_empty());
        if n == 12 {
            let mut sizes: Vec<usize> = calls
                .iter()
                .map(|r| payload_of(&r.prompt).unwrap()["paper_ids"].as_array().unwrap().len())
                .collect();
            sizes.sort();
            assert_eq!(sizes, vec![2, 5, 5]);
        }
    }
}

#[test]
fn batch_report_strips_unknown_attributions() {
    let (c, b) = ctx(report_backend());
    batch_code_report(&c, &pseudo(5), "topic", &CodeAnalysisConfig::default()).unwrap();
    let integrate = &b.calls_tagged(tags::CODE_INTEGRATE)[0];
    assert!(!integrate.prompt.contains("<q9>"));
    assert!(integrate.prompt.contains("<c0>"));
    let flagged: Vec<_> = c.events.of_kind(EventKind::Monitor).into_iter().filter_map(|e| e.subject).collect();
    assert_eq!(flagged, vec!["q9".to_string()]);
}

#[test]
fn oversized_batch_reports_are_merged_pairwise() {
    let long = "word ".repeat(1500);
    let backend = ScriptedBackend::new()
        .with_rule(Rule::tag(tags::CODE_BATCH_REPORT).reply(long.clone()))
        .with_rule(Rule::tag(tags::CODE_MERGE).reply("short merged"))
        .with_rule(Rule::tag(tags::CODE_INTEGRATE).reply("final"));
    let profile = BackendProfile {
        context_window: 4000,
        ..Default::default()
    };
    let (c, b) = ctx_profile(backend, profile);
    let out = batch_code_report(&c, &pseudo(20), "topic", &CodeAnalysisConfig::default()).unwrap();
    assert_eq!(out, "final");
    assert_eq!(b.calls_tagged(tags::CODE_BATCH_REPORT).len(), 4);
    // 4 reports of ~1900 tokens exceed the room; one round of 2 merges suffices
    assert_eq!(b.calls_tagged(tags::CODE_MERGE).len(), 2);
}

#[test]
fn empty_pseudocode_list_is_precondition_error() {
    let (c, _) = ctx(ScriptedBackend::new());
    assert!(matches!(
        batch_code_report(&c, &[], "t", &CodeAnalysisConfig::default()),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn environment_payload_lists_config_files_or_placeholder() {
    let report = "## Framework Selection Analysis\n| Repo | Framework |\n|---|---|\n| p1 | PyTorch |\n\n## Deployment\nMostly scripts.";
    let (c, b) = ctx(ScriptedBackend::new().with_rule(Rule::tag(tags::ENVIRONMENT_REPORT).reply(report)));
    let with = RepoSnapshot::new(
        pid("p1"),
        [("requirements.txt", "torch==2.1"), ("README.md", "# Tool"), ("a.py", "x")]
            .map(|(a, b)| (a.to_string(), b.to_string())),
    )
    .unwrap();
    let without = RepoSnapshot::new(pid("p2"), [("a.py".to_string(), "x".to_string())]).unwrap();
    let out = environment_report(&c, &[with, without], &CodeAnalysisConfig::default()).unwrap();
    assert!(out.contains("## Framework Selection Analysis"));
    let payload = payload_of(&b.calls()[0].prompt).unwrap();
    let repos = payload["repositories"].as_array().unwrap();
    let paths: Vec<&str> = repos[0]["config_files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["path"].as_str().unwrap())
        .collect();
    assert_eq!(paths, vec!["README.md", "requirements.txt"]);
    assert_eq!(repos[1]["config_files"], NO_CONFIG);
}

#[test]
fn stage_runs_against_directory_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("tool");
    std::fs::create_dir_all(&root).unwrap();
    for (f, t) in [("main.py", "a"), ("model.py", "b"), ("train.py", "c"), ("requirements.txt", "numpy")] {
        std::fs::write(root.join(f), t).unwrap();
    }
    let mut ops = READS.to_vec();
    ops.extend(["create", "review", "finish"]);
    let backend = with_workers(vec![plan(&ops)])
        .with_rule(Rule::tag(tags::CODE_BATCH_REPORT).reply("Report <p1>."))
        .with_rule(Rule::tag(tags::CODE_INTEGRATE).reply("Integrated <p1>."))
        .with_rule(Rule::tag(tags::ENVIRONMENT_REPORT).reply("## Frameworks\nnumpy"));
    let (c, _) = ctx(backend);
    let mut s = KnowledgeSubstrate::new("topic");
    let mut p1 = PaperRecord::new(pid("p1"), "Tool");
    p1.repo_urls = vec!["https://github.com/org/tool".into()];
    let mut p2 = PaperRecord::new(pid("p2"), "Other");
    p2.repo_urls = vec!["https://github.com/org/missing".into()];
    s.insert_paper(p1);
    s.insert_paper(p2);
    s.insert_paper(PaperRecord::new(pid("p3"), "No code"));
    let cfg = CodeAnalysisConfig {
        enabled: true,
        ..Default::default()
    };
    run_code_analysis(&c, &mut s, &DirectoryFetcher::new(dir.path()), &cfg).unwrap();
    assert_eq!(s.code_reports.len(), 1);
    let overview = s.code_overview.as_ref().unwrap();
    assert_eq!(overview.code_report, "Integrated <p1>.");
    assert!(overview.environment_report.contains("numpy"));
    let skips = c.events.of_kind(EventKind::Skip);
    assert_eq!(skips.len(), 1);
    assert_eq!(skips[0].subject.as_deref(), Some("p2"));
    s.check_integrity().unwrap();
}

mod props {
    use super::*;
    use proptest::prelude::*;

    fn op_strategy() -> impl Strategy<Value = String> {
        prop_oneof![
            (0usize..5).prop_map(|i| format!("get_source_code:{}", ["main.py", "model.py", "train.py", "utils.py", "gone.py"][i])),
            Just("create".to_string()),
            Just("revise".to_string()),
            Just("review".to_string()),
            Just("finish".to_string()),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        /// Any planner behaviour yields a legal accepted trace within the
        /// round budget.
        #[test]
        fn accepted_traces_are_legal(
            plans in proptest::collection::vec(proptest::collection::vec(op_strategy(), 1..4), 1..8),
            max_rounds in 1u32..14,
        ) {
            let replies: Vec<Reply> = plans
                .iter()
                .map(|p| plan(&p.iter().map(String::as_str).collect::<Vec<_>>()))
                .collect();
            let (c, _) = ctx(with_workers(replies));
            let cfg = CodeAnalysisConfig { max_rounds, ..Default::default() };
            let run = run_pseudocode_loop(&c, &repo(), &cfg).unwrap();
            prop_assert!(run.rounds <= max_rounds);
            prop_assert_eq!(run.trail.len() as u32, run.rounds);
            prop_assert!(check_trace(&run.trail, cfg.min_reads, cfg.revise_every).is_ok());
            let finishes = run.trail.iter().filter(|s| s.accepted && s.op == PlannerOp::Finish).count();
            prop_assert!(finishes <= 1);
            prop_assert_eq!(finishes == 1, run.finished);
        }
    }
}
