//! Drives the `surveyor` binary end to end over the bundled fixture.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/rag/surveyor.toml")
}

fn surveyor(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surveyor"))
        .arg("--config")
        .arg(fixture_config())
        .arg("--output")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn generate_inspect_evaluate_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let g = surveyor(out, &["generate"]);
    assert!(g.status.success(), "{}", stderr(&g));
    let survey = out.join("survey.md");
    assert!(survey.exists() && out.join("survey.citations.json").exists());
    assert!(out.join("manifest.json").exists() && out.join("checkpoint.json").exists());

    let clusters = surveyor(out, &["inspect", "clusters"]);
    assert!(clusters.status.success());
    assert!(stdout(&clusters).contains("2301.00005"));
    let outline = surveyor(out, &["inspect", "outline"]);
    assert!(stdout(&outline).contains("Conclusion"));
    let keynote = surveyor(out, &["inspect", "keynote", "2301.00005"]);
    assert!(stdout(&keynote).contains("\"contributions\""));
    let analysis = surveyor(out, &["inspect", "analysis", "--cluster", "1"]);
    assert!(stdout(&analysis).contains("relation_graph"));

    let e = surveyor(out, &["evaluate", "--survey", survey.to_str().unwrap()]);
    assert!(e.status.success(), "{}", stderr(&e));
    assert!(stdout(&e).contains("valid_citation_ratio"));
    let csv = std::fs::read_to_string(out.join("evaluation.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("surveyor,"));

    let r = surveyor(out, &["generate", "--resume"]);
    assert!(r.status.success(), "{}", stderr(&r));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["stats"]["transport_calls"], 0);
    assert_eq!(manifest["stages_run"].as_array().unwrap().len(), 0);
}

#[test]
fn resume_with_changed_configuration_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    assert!(surveyor(dir.path(), &["generate"]).status.success());
    let r = surveyor(dir.path(), &["generate", "--resume", "--topic", "dense retrieval"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stderr(&r).contains("configuration changed"));
}

#[test]
fn exit_codes_follow_failure_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    let bad_cfg = out.join("bad.toml");
    std::fs::write(&bad_cfg, "topic = 'x'\nworkers = 0\n").unwrap();
    let c = Command::new(env!("CARGO_BIN_EXE_surveyor"))
        .args(["--config", bad_cfg.to_str().unwrap(), "generate"])
        .output()
        .unwrap();
    assert_eq!(c.status.code(), Some(2), "{}", stderr(&c));

    let s = surveyor(out, &["generate", "--topic", "lattice chromodynamics"]);
    assert_eq!(s.status.code(), Some(3), "{}", stderr(&s));
    assert!(stderr(&s).contains("stage retrieval failed"));

    let lone = out.join("lone.md");
    std::fs::write(&lone, "# A survey\n\nText [1].\n").unwrap();
    let e = surveyor(out, &["evaluate", "--survey", lone.to_str().unwrap()]);
    assert_eq!(e.status.code(), Some(4));
    assert!(stderr(&e).contains("sidecar"));

    let i = surveyor(out, &["inspect", "keynote", "2301.00001"]);
    assert_eq!(i.status.code(), Some(1));
}

#[test]
fn code_analysis_flag_adds_repository_reports() {
    let dir = tempfile::tempdir().unwrap();
    let g = surveyor(dir.path(), &["generate", "--enable-code-analysis"]);
    assert!(g.status.success(), "{}", stderr(&g));
    let reports = std::fs::read_dir(dir.path().join("substrate/code_reports")).unwrap().count();
    assert_eq!(reports, 3);
}

#[test]
fn config_command_prints_defaults_and_cache_clear_empties_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let c = surveyor(dir.path(), &["config"]);
    let text = stdout(&c);
    assert!(text.contains("max_attempts = 10"));
    assert!(text.contains("[refinement.survey]"));
    assert!(surveyor(dir.path(), &["generate"]).status.success());
    assert!(dir.path().join("cache").exists());
    let clear = surveyor(dir.path(), &["cache", "clear"]);
    assert!(clear.status.success());
    assert!(!dir.path().join("cache").exists());
}
