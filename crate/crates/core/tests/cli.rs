use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use spinodal::report::read_reports;

fn spinodal(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinodal"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn validate_rejects_a2_violation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.cfg",
        "[model]\nlambda = 40\nnoise = degenerate\nb = 1\nactive = 1\ndt = 1e-6\n",
    );
    let out = spinodal(&["validate", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"], "ValidationError");
    assert_eq!(v["condition"], "A2");
    assert!(v["message"].as_str().unwrap().contains("A2"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", "[model]\nlambda = ten\n");
    let out = spinodal(&["simulate", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"], "ConfigError");
}

#[test]
fn power_harnack_at_equal_starts_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "power.cfg",
        "seed = 3\n[model]\nlambda = 1\nmodes = 16\ndt = 1e-4\n[run]\nx = 0, 0.05, 0.02\nt = 0.01\npaths = 200\np = 2\n",
    );
    let out = spinodal(
        &["harnack", "--kind", "power", "--config", &cfg, "--out", "o"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let reports = read_reports(fs::read(dir.path().join("o/reports.jsonl")).unwrap().as_slice()).unwrap();
    assert_eq!(reports.len(), 1);
    assert!(reports[0].pass && reports[0].slack >= 0.0);
    assert_eq!(reports[0].ensemble, 200);
    assert_eq!(reports[0].seed, 3);
}

#[test]
fn workers_and_manifest_reproduce_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "white.cfg",
        "seed = 11\n[model]\nlambda = 1\nmodes = 16\ndt = 1e-5\n[run]\nx = 0, 0.02, -0.01\ny = 0, 0.01\nhorizon = 0.004\npaths = 16\ntrajectory = reduced\n",
    );
    let a = spinodal(
        &["couple-white", "--config", &cfg, "--out", "a", "--workers", "1"],
        dir.path(),
    );
    assert!(a.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&a.stderr));
    let b = spinodal(
        &["couple-white", "--config", &cfg, "--out", "b", "--workers", "8"],
        dir.path(),
    );
    assert_eq!(a.status.code(), b.status.code());
    let ra = fs::read(dir.path().join("a/reports.jsonl")).unwrap();
    assert!(!ra.is_empty());
    assert_eq!(ra, fs::read(dir.path().join("b/reports.jsonl")).unwrap());
    assert!(dir.path().join("a/trajectory.csv").exists());

    let manifest = dir.path().join("a/manifest.txt");
    let m = spinodal(
        &["couple-white", "--config", manifest.to_str().unwrap(), "--out", "c"],
        dir.path(),
    );
    assert_eq!(a.status.code(), m.status.code());
    assert_eq!(ra, fs::read(dir.path().join("c/reports.jsonl")).unwrap());
    assert_eq!(
        fs::read(&manifest).unwrap(),
        fs::read(dir.path().join("c/manifest.txt")).unwrap()
    );
}

#[test]
fn simulate_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sim.cfg",
        "[model]\nlambda = 1\nmodes = 8\nmass = 0.2\n[run]\nx = 0.2, 0.1\nt = 0.01\npaths = 4\ntrajectory = full\nrecord_every = 10\n",
    );
    let out = spinodal(&["simulate", "--config", &cfg, "--out", "s"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let traj = fs::read_to_string(dir.path().join("s/trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,mode_0,"));
    assert_eq!(traj.lines().count(), 1 + 11);
    let ends = fs::read_to_string(dir.path().join("s/endpoints.csv")).unwrap();
    assert_eq!(ends.lines().count(), 5);
}
