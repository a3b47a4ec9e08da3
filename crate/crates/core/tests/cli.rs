use std::path::Path;
use std::process::{Command, Output};

use quantctl::config::SMOKE;

fn quantctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quantctl")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn preset_validates() {
    let out = quantctl(&["--preset", "reproduce-paper", "validate"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn odd_k_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMOKE.replace("K = 2", "K = 3"));
    let out = quantctl(&["--config", &cfg, "validate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("scheme.K: K must be even"), "{}", stderr(&out));
}

#[test]
fn small_hold_threshold_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMOKE.replace("L = 9.0", "L = 0.1"));
    let out = quantctl(&["--config", &cfg, "validate"]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("condition 5"), "{stdout}");
}

#[test]
fn unknown_keys_and_missing_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMOKE}\n[extra]\nx = 1\n"));
    assert_eq!(quantctl(&["--config", &cfg, "validate"]).status.code(), Some(2));
    let missing = dir.path().join("nope.toml");
    assert_eq!(quantctl(&["--config", missing.to_str().unwrap(), "validate"]).status.code(), Some(3));
    assert_eq!(quantctl(&["validate"]).status.code(), Some(2));
}

#[test]
fn sweep_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMOKE.replace("max_T = 2000000", "max_T = 20000");
    let cfg = write_config(dir.path(), &text);
    let out_dir = dir.path().join("out");
    let out = quantctl(&["--config", &cfg, "--out-dir", out_dir.to_str().unwrap(), "sweep"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert!(csv.starts_with(quantctl::sim::SWEEP_CSV_HEADER));
    assert_eq!(csv.lines().count(), 3);
    assert!(out_dir.join("sweep_failures.csv").exists());
}

#[test]
fn trace_and_tailbound_write_files() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = quantctl(&["--preset", "smoke", "--out-dir", out_dir, "trace", "--n", "8", "--steps", "500"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(dir.path().join("trace_N8.qctr").exists());
    let csv = std::fs::read_to_string(dir.path().join("trace_N8.csv")).unwrap();
    assert_eq!(csv.lines().count(), 501);

    let out = quantctl(&["--preset", "smoke", "--out-dir", out_dir, "tailbound", "--n", "8", "--episodes", "1000", "--k-max", "5"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(dir.path().join("tailbound.csv").exists());
}
