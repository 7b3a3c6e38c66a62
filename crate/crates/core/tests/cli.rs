use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

use polylab::experiment::verify_manifest;
use polylab::{Point, Pspm, Site};

fn polylab(args: &[&str], cfg: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_polylab"));
    cmd.args(args);
    if let Some(p) = cfg {
        cmd.arg("-c").arg(p);
    }
    cmd.output().unwrap()
}

fn config(dir: &Path, name: &str, body: Value) -> std::path::PathBuf {
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, body.to_string()).unwrap();
    path
}

fn base(dir: &Path, out: &str) -> Value {
    json!({
        "env": {"kind": "gaussian", "mean": 0.0, "sd": 1.0},
        "walk": {"kind": "srw", "d": 1},
        "beta": 1.0,
        "n": 100,
        "seeds": {"count": 4, "base": 9},
        "outputs": dir.join(out),
    })
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn simulate_at_vanishing_beta() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base(dir.path(), "sim");
    v["beta"] = json!(1e-8);
    v["localization"] = json!({});
    let out = polylab(&["simulate"], Some(&config(dir.path(), "sim", v)));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert!(summary["mean_F"].as_f64().unwrap().abs() < 1e-6);
    for f in ["replicas.csv", "localization.csv", "summary.jsonl", "manifest.json"] {
        assert!(dir.path().join("sim").join(f).exists(), "{f}");
    }
    assert!(verify_manifest(&dir.path().join("sim/manifest.json")).unwrap().is_empty());
}

#[test]
fn manifest_detects_edited_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = polylab(&["simulate"], Some(&config(dir.path(), "sim", base(dir.path(), "sim"))));
    assert!(out.status.success());
    let replicas = dir.path().join("sim/replicas.csv");
    let mut text = std::fs::read_to_string(&replicas).unwrap();
    text.push('\n');
    std::fs::write(&replicas, text).unwrap();
    let bad = verify_manifest(&dir.path().join("sim/manifest.json")).unwrap();
    assert_eq!(bad, vec!["replicas.csv".to_string()]);
}

#[test]
fn missing_key_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base(dir.path(), "x");
    v.as_object_mut().unwrap().remove("env");
    let out = polylab(&["simulate"], Some(&config(dir.path(), "bad", v)));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("env"));
}

#[test]
fn scan_rejects_grid_reaching_beta_max() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base(dir.path(), "scan");
    v["env"] = json!({"kind": "exponential", "rate": 1.0});
    v["beta"] = json!({"start": 0.5, "stop": 1.5, "count": 3});
    let out = polylab(&["scan"], Some(&config(dir.path(), "scan", v)));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("beta") && err.contains("1.5"), "{err}");
    assert!(!dir.path().join("scan").exists());
}

#[test]
fn scan_with_a_single_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base(dir.path(), "scan");
    v["beta"] = json!({"start": 0.7, "stop": 2.0, "count": 1});
    let out = polylab(&["scan"], Some(&config(dir.path(), "scan", v)));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    let rows = summary["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["beta"], json!(0.7));
    assert_eq!(summary["isotonic_violations"], json!(0));
}

#[test]
fn oracle_default_passes() {
    let out = polylab(&["oracle"], None);
    assert!(out.status.success());
    let report = stdout_json(&out);
    assert_eq!(report["passed"], json!(true));
    assert_eq!(report["checks"].as_array().unwrap().len(), 4);
}

#[test]
fn oracle_reports_a_corrupted_check() {
    let out = polylab(&["oracle", "--cases", "3", "--corrupt", "shift_identity"], None);
    assert_eq!(out.status.code(), Some(1));
    let report = stdout_json(&out);
    let failed: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["status"] == "fail")
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, vec!["shift_identity"]);
}

#[test]
fn oracle_skips_enumeration_beyond_the_guard() {
    let out = polylab(&["oracle", "--cases", "2", "--n", "40"], None);
    assert!(out.status.success());
    let report = stdout_json(&out);
    let skipped = report["checks"].as_array().unwrap().iter().filter(|c| c["status"] == "skipped").count();
    assert!(skipped >= 1);
}

#[test]
fn chain_from_zero_stays_put() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base(dir.path(), "chain");
    v["n"] = json!(300);
    v["chain"] = json!({"initial": "zero", "checkpoints": [100, 300]});
    let out = polylab(&["chain"], Some(&config(dir.path(), "chain", v)));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    for g in summary["stationarity"].as_array().unwrap() {
        assert_eq!(g["gap"], json!(0.0));
    }
    assert!(summary["variational"].is_null());
    let lambda = 0.5f64;
    assert!((summary["log_z"].as_f64().unwrap() - 300.0 * lambda).abs() < 1e-9);
}

#[test]
fn chain_reports_variational_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base(dir.path(), "chain");
    v["n"] = json!(200);
    v["seeds"] = json!({"count": 2, "base": 3});
    v["chain"] = json!({"checkpoints": [100, 200], "subsample": 16, "energy_samples": 500, "moment_samples": 500});
    let out = polylab(&["chain"], Some(&config(dir.path(), "chain", v)));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert!(summary["variational"].is_object());
    assert_eq!(summary["stationarity"].as_array().unwrap().len(), 2);
    let lines = std::fs::read_to_string(dir.path().join("chain/trajectory.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 201);
    let first: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert!(first["logRatio"].is_null());
}

#[test]
fn dist_between_orbit_mates() {
    let dir = tempfile::tempdir().unwrap();
    let f = Pspm::new(
        1,
        vec![(Site::new(1, Point::new1(0)), 0.5), (Site::new(1, Point::new1(2)), 0.25), (Site::new(2, Point::new1(5)), 0.1)],
    )
    .unwrap();
    let g = Pspm::new(
        1,
        vec![(Site::new(1, Point::new1(7)), 0.1), (Site::new(3, Point::new1(-3)), 0.5), (Site::new(3, Point::new1(-1)), 0.25)],
    )
    .unwrap();
    let fp = dir.path().join("f.json");
    let gp = dir.path().join("g.json");
    std::fs::write(&fp, f.to_json().to_string()).unwrap();
    std::fs::write(&gp, g.to_json().to_string()).unwrap();
    let out = polylab(&["dist", fp.to_str().unwrap(), gp.to_str().unwrap(), "--exact"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = stdout_json(&out);
    assert_eq!(r["d_exact"], json!(0.0));
    assert!(r["d_upper"].as_f64().unwrap() >= 0.0);
    assert_eq!(r["degree_of_argmin"], json!("inf"));
    let out = polylab(&["dist", fp.to_str().unwrap(), gp.to_str().unwrap(), "--alpha", "1"], None);
    assert_eq!(out.status.code(), Some(1));
}
