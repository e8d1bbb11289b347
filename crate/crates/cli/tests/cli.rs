use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adaptive-mpc"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, cfg: &Path) -> PathBuf {
    let artifact = dir.join("artifact.json");
    let out = run(&["synth", "--config", s(cfg), "--out", s(&artifact)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    artifact
}

#[test]
fn synth_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("benchmark_robust.toml");
    let path = synth(dir.path(), &cfg);
    let first = fs::read(&path).unwrap();
    synth(dir.path(), &cfg);
    assert_eq!(first, fs::read(&path).unwrap());
    let json: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(json["mode"], "robust");
    assert_eq!(json["config_digest"].as_str().unwrap().len(), 64);
    assert!(!json["terminal"]["set"]["offsets"].as_array().unwrap().is_empty());
}

#[test]
fn campaigns_refuse_foreign_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let artifact = synth(dir.path(), &config("benchmark_robust.toml"));
    let out = run(&[
        "montecarlo",
        "--config",
        s(&config("benchmark_stochastic.toml")),
        "--artifact",
        s(&artifact),
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different system"));
    let out = run(&["montecarlo", "--config", s(&config("benchmark_robust.toml"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn campaign_writes_records_and_compares() {
    let dir = tempfile::tempdir().unwrap();
    let mut metrics = Vec::new();
    for (name, sub) in [("benchmark_robust.toml", "r"), ("benchmark_stochastic.toml", "s")] {
        let cfg = config(name);
        let artifact = synth(&dir.path().join(sub), &cfg);
        let out_dir = dir.path().join(sub).join("campaign");
        let out = run(&[
            "montecarlo",
            "--config",
            s(&cfg),
            "--artifact",
            s(&artifact),
            "--out",
            s(&out_dir),
            "--trajectories",
            "2",
            "--steps",
            "3",
            "--seed",
            "9",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        for f in ["metrics.json", "trajectory_000.csv", "trajectory_001.csv", "fps_001.json"] {
            assert!(out_dir.join(f).exists(), "{f}");
        }
        let csv = fs::read_to_string(out_dir.join("trajectory_000.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("t,x0,x1,u0,w0,w1,theta0,theta1,stage_cost,j_star,x_next0,x_next1,viol_x0"));
        metrics.push(out_dir.join("metrics.json"));
    }
    let out = run(&["compare", s(&metrics[0]), s(&metrics[1])]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cmp: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cmp["cost_pairs"].as_array().unwrap().len(), 2);

    let out = run(&["compare", s(&metrics[0]), s(&metrics[0])]);
    let cmp: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cmp["reduction"], 0.0);

    // A campaign on another seed is not comparable.
    let other = dir.path().join("other");
    let out = run(&[
        "run",
        "--config",
        s(&config("benchmark_stochastic.toml")),
        "--out",
        s(&other),
        "--steps",
        "3",
        "--seed",
        "10",
    ]);
    assert!(out.status.success());
    let out = run(&["compare", s(&metrics[0]), s(&other.join("metrics.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not comparable"));
}

#[test]
fn verify_reports_passing_certificates() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = run(&[
        "verify",
        "--config",
        s(&config("benchmark_stochastic.toml")),
        "--samples",
        "200",
        "--out",
        s(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert!(json["invariance"]["max_violation"].as_f64().unwrap() <= 1e-7);
    assert!(json["admissibility"]["samples_or_vertices"].as_u64().unwrap() > 0);
}

#[test]
fn infeasible_start_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("benchmark_robust.toml")).unwrap().replace("x0 = [-3.21, -0.25]", "x0 = [20.0, 0.0]");
    let cfg = dir.path().join("far.toml");
    fs::write(&cfg, text).unwrap();
    let out = run(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("o")), "--steps", "2"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_inputs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("benchmark_robust.toml");
    let artifact = synth(dir.path(), &cfg);
    let out = run(&["montecarlo", "--config", s(&cfg), "--artifact", s(&artifact), "--trajectories", "0", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["synth", "--config", "/nonexistent.toml"]);
    assert_eq!(out.status.code(), Some(2));
}
