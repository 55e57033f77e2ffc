use std::path::Path;
use std::process::{Command, Output};

fn mvinfer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvinfer")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, json).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{
  "grid": {"dim": 1, "points_per_axis": 32},
  "initial": "laplace:m=1",
  "solver": {"T": 0.25, "steps": 64}
}"#;

#[test]
fn solve_succeeds_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = mvinfer(&["solve", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "17"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(summary.is_object());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["experiment"], "solve");
    assert_eq!(manifest["config"]["seed"], 17);
    assert_eq!(manifest["config"]["chain"]["seed"], 17);
    assert!(out.join("trajectory.csv").exists());
}

#[test]
fn named_experiment_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("profile");
    let o = mvinfer(&[
        "experiment",
        "stability_profile",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--threads",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("stability_profile.csv").exists());
}

#[test]
fn unknown_config_key_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"solver": {"T": 0.25, "step": 64}}"#);
    let o = mvinfer(&["solve", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("unknown field"), "{err}");
}

#[test]
fn unknown_experiment_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = mvinfer(&["experiment", "forward_rates", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn instability_exits_with_two() {
    // Strong aggregation on a coarse grid: the discrete solution goes negative.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"grid": {"dim": 1, "points_per_axis": 16}, "potential": "kuramoto:scale=30",
            "initial": "laplace:m=1", "solver": {"T": 0.5, "steps": 2048}}"#,
    );
    let o = mvinfer(&["solve", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("instability"));
}

#[test]
fn diagnose_prints_one_line_per_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = mvinfer(&["diagnose", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().count() >= 3, "{stdout}");
    assert!(stdout.lines().all(|l| l.ends_with("holds")));
    let log = std::fs::read_to_string(dir.path().join("diagnostics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), stdout.lines().count());
}
