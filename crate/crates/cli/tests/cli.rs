use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ensemble-judge"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn cli")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stage(dir: &Path, args: &[&str]) -> String {
    let mut full = vec!["--config", "run.json"];
    full.extend_from_slice(args);
    ok(dir, &full)
}

fn setup(n: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["synth", "--n", &n.to_string(), "--seed", "7", "--out", "data", "--write-config", "run.json"],
    );
    stage(dir.path(), &["ingest", "--corpus", "data/corpus.jsonl"]);
    dir
}

fn artifacts(dir: &Path) -> Vec<PathBuf> {
    let w = dir.join("work");
    vec![
        w.join("records.jsonl"),
        w.join("split.jsonl"),
        w.join("store.jsonl"),
        w.join("features/train.jsonl"),
        w.join("features/dev.jsonl"),
        w.join("features/test.jsonl"),
        w.join("model.json"),
        w.join("report.json"),
        w.join("report.txt"),
    ]
}

fn snapshot(dir: &Path) -> Vec<Vec<u8>> {
    artifacts(dir).iter().map(|p| std::fs::read(p).unwrap()).collect()
}

fn full_pipeline(dir: &Path) -> String {
    stage(dir, &["run-agents"]);
    stage(dir, &["build-features"]);
    stage(dir, &["train"]);
    stage(dir, &["evaluate"])
}

#[test]
fn end_to_end_two_thousand_within_budget() {
    let start = Instant::now();
    let dir = setup(2000);
    let text = full_pipeline(dir.path());
    assert!(start.elapsed().as_secs_f64() < 60.0);
    assert!(text.contains("Aggregator"));
    assert!(text.contains("High conflict"));

    let json = stage(dir.path(), &["report", "--format", "json"]);
    let report: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(report["methods"].as_object().unwrap().len(), 6);
    let regimes: u64 = report["counts"]["regimes"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(regimes, report["counts"]["test"].as_u64().unwrap());
    assert_eq!(regimes, 400);
}

#[test]
fn evaluate_before_train_reports_missing_model() {
    let dir = setup(200);
    stage(dir.path(), &["run-agents"]);
    let out = run(dir.path(), &["--config", "run.json", "evaluate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model file missing"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = setup(500);
    full_pipeline(dir.path());
    let first = snapshot(dir.path());
    stage(dir.path(), &["ingest", "--corpus", "data/corpus.jsonl"]);
    let rerun = stage(dir.path(), &["run-agents"]);
    assert!(rerun.contains("0 generated"), "{rerun}");
    full_pipeline(dir.path());
    let second = snapshot(dir.path());
    for ((a, b), path) in first.iter().zip(&second).zip(artifacts(dir.path())) {
        assert!(a == b, "{} changed on rerun", path.display());
    }
}

#[test]
fn train_refuses_incomplete_cache() {
    let dir = setup(200);
    stage(dir.path(), &["run-agents"]);
    let store = dir.path().join("work/store.jsonl");
    let text = std::fs::read_to_string(&store).unwrap();
    let kept: Vec<&str> = text.lines().take(100).collect();
    std::fs::write(&store, kept.join("\n") + "\n").unwrap();
    let out = run(dir.path(), &["--config", "run.json", "train"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("coverage incomplete") && err.contains("missing"), "{err}");
}

#[test]
fn exit_codes_for_usage_and_missing_config() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["synth", "--n", "abc", "--seed", "1"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
    let out = run(dir.path(), &["--config", "absent.json", "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config file missing"));
}

#[test]
fn synth_rejects_small_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["synth", "--n", "50", "--seed", "1"]);
    assert!(!out.status.success());
}
