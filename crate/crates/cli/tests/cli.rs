use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn atm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atm")).args(args).output().unwrap()
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&atm(&["run", "--episodes", "3"])), 1);
    assert_eq!(code(&atm(&["fly"])), 1);
    assert_eq!(code(&atm(&["--help"])), 0);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[atm]\ngaze_min_deg = 80.0\ngaze_max_deg = 10.0\n").unwrap();
    let out = atm(&["--config", s(&cfg), "metrics", "--in", s(dir.path())]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn scenario_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = atm(&["run", "--scenario", s(&missing), "--episodes", "1", "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    let broken = dir.path().join("broken.toml");
    std::fs::write(&broken, "room = 3\n").unwrap();
    assert_eq!(code(&atm(&["trace", "--scenario", s(&broken), "--seed", "1", "--out", "x.json"])), 2);
}

#[test]
fn runtime_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&atm(&["metrics", "--in", s(&dir.path().join("none.csv"))])), 3);
    // A live scenario has no scripted person to replay.
    let out = dir.path().join("t.json");
    assert_eq!(code(&atm(&["trace", "--scenario", s(&scenario("hitl.toml")), "--seed", "1", "--out", s(&out)])), 3);
}

#[test]
fn run_then_metrics_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out = atm(&[
        "run",
        "--scenario",
        s(&scenario("nominal.toml")),
        "--episodes",
        "4",
        "--master-seed",
        "7",
        "--pos-sigma",
        "0.05",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["episodes.csv", "metrics.json", "timings.csv", "timings.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("episodes.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    let m = atm(&["metrics", "--in", s(dir.path()), "--json"]);
    assert_eq!(code(&m), 0);
    let recomputed: serde_json::Value = serde_json::from_slice(&m.stdout).unwrap();
    let written: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(recomputed, written);
    let text = atm(&["metrics", "--in", s(&dir.path().join("episodes.csv"))]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("accuracy"));
}

#[test]
fn trace_writes_the_episode_record() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.json");
    let out = atm(&["trace", "--scenario", s(&scenario("nominal.toml")), "--seed", "1", "--out", s(&path)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc["result"]["seed"], 1);
    assert!(doc["simulations"].as_array().is_some_and(|s| !s.is_empty()));
    assert!(doc["events"].as_array().is_some_and(|e| e.iter().any(|e| e["kind"] == "sweep")));
    assert!(doc["scenario"]["entities"].is_array());
}
