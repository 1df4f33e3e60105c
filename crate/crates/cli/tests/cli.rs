use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn sculpt(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sculpt"))
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cfg: &Path, out: &Path) {
    let o = sculpt(args, cfg, out);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn error_kind(o: &Output) -> String {
    assert!(!o.status.success());
    let v: Value = serde_json::from_slice(&o.stderr).expect("error JSON on stderr");
    v["error"].as_str().unwrap().to_string()
}

fn grid_pipeline(out: &Path) {
    let cfg = config("grid_smoke.toml");
    for cmd in ["train-base", "train-classifier", "compose", "evaluate", "report"] {
        ok(&[cmd], &cfg, out);
    }
}

#[test]
fn grid_smoke_pipeline_is_fast_exact_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let start = Instant::now();
    grid_pipeline(&a);
    assert!(start.elapsed().as_secs_f64() < 60.0);
    grid_pipeline(&b);
    let metrics = std::fs::read(a.join("metrics.json")).unwrap();
    assert_eq!(metrics, std::fs::read(b.join("metrics.json")).unwrap());
    let v: Value = serde_json::from_slice(&metrics).unwrap();
    assert!(v["exact_oracle_l1"].as_f64().unwrap() <= 1e-3);
    assert!(v["learned_l1"].as_f64().is_some());
    for file in ["report/grid.ppm", "report/grid.png", "compose/exact.csv", "compose/learned.csv"] {
        assert!(a.join(file).exists(), "{file}");
    }
    assert!(std::fs::read(a.join("report/grid.ppm")).unwrap().starts_with(b"P6"));
}

#[test]
fn empty_expression_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = sculpt(&["compose", "--expr", "  "], &config("grid_smoke.toml"), dir.path());
    assert_eq!(error_kind(&o), "ConfigError");
}

#[test]
fn unknown_keys_and_missing_config_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(config("grid_smoke.toml")).unwrap().replace("seed = 1", "seed = 1\ncolour = 2");
    std::fs::write(&bad, text).unwrap();
    assert_eq!(error_kind(&sculpt(&["train-base"], &bad, dir.path())), "ConfigError");
    let o = Command::new(env!("CARGO_BIN_EXE_sculpt")).arg("report").output().unwrap();
    assert_eq!(error_kind(&o), "ConfigError");
}

#[test]
fn commands_report_missing_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let o = sculpt(&["compose"], &config("grid_smoke.toml"), dir.path());
    assert_eq!(error_kind(&o), "MissingCheckpoint");
    let o = sculpt(&["evaluate"], &config("gaussian1d.toml"), dir.path());
    assert_eq!(error_kind(&o), "MissingCheckpoint");
}

#[test]
fn gaussian_report_flags_the_improper_negation() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["report"], &config("gaussian1d.toml"), dir.path());
    let v: Value = serde_json::from_slice(&std::fs::read(dir.path().join("report/curves.json")).unwrap()).unwrap();
    let find = |name: &str| v.as_array().unwrap().iter().find(|e| e["name"] == name).unwrap().clone();
    assert_eq!(find("negation_gamma0.1")["proper"], true);
    assert_eq!(find("negation_gamma0.5")["proper"], false);
    assert!(find("negation_gamma0.5")["file"].is_null());
    for name in ["hm", "contrast_alpha0.05", "contrast_alpha0.95", "p1", "p2"] {
        let file = find(name)["file"].as_str().unwrap().to_string();
        assert!(dir.path().join("report").join(file).exists(), "{name}");
    }
    assert!(dir.path().join("report/overlay.png").exists());
}

#[test]
fn small_gaussian_composition_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    let text = std::fs::read_to_string(config("gaussian1d.toml"))
        .unwrap()
        .replace("samples = 5000", "samples = 400")
        .replace("steps = 1000", "steps = 200");
    std::fs::write(&cfg, text).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["compose", "--threads", "1"], &cfg, &out);
        ok(&["evaluate"], &cfg, &out);
        std::fs::read(out.join("metrics.json")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let v: Value = serde_json::from_slice(&a).unwrap();
    let w1 = v["oracle_w1"][0].as_f64().unwrap();
    assert!(w1 < 0.15, "W1 {w1}");
    assert!(v["learned_w1"].is_null());
}

#[test]
fn learned_diffusion_guide_needs_a_classifier() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("learned.toml");
    let text = std::fs::read_to_string(config("gaussian1d.toml")).unwrap().replace("guide = \"oracle\"", "guide = \"learned\"");
    std::fs::write(&cfg, text).unwrap();
    assert_eq!(error_kind(&sculpt(&["compose"], &cfg, dir.path())), "MissingCheckpoint");
    let o = sculpt(&["train-classifier", "--expr", "p1 con[0.9] p2"], &cfg, dir.path());
    assert_eq!(error_kind(&o), "ConfigError");
}
