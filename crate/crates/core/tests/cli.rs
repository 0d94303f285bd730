use std::path::Path;
use std::process::{Command, Output};

fn tgt(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tgt")).args(args).current_dir(dir).output().expect("binary runs")
}

fn error_category(out: &Output) -> String {
    let v: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).expect("JSON error line");
    v["error"].as_str().unwrap().to_string()
}

#[test]
fn gen_data_writes_exact_counts() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[data]\ntrain_count = 100\ntest_count = 3\nmin_nodes = 4\nmax_nodes = 6\n").unwrap();
    let out = tgt(&["gen-data", "-c", "c.toml"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("data/train.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 100);
}

#[test]
fn verify_reports_a_positive_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = tgt(&["verify", "-o", "v"], dir.path());
    assert!(out.status.success());
    let line = String::from_utf8(out.stdout).unwrap();
    let count: usize = line.split_whitespace().next().unwrap().parse().unwrap();
    assert!(count > 0 && line.contains("checks passed"));
    let csv = std::fs::read_to_string(dir.path().join("v/verify.csv")).unwrap();
    assert_eq!(csv.lines().count(), count + 1);
}

#[test]
fn failures_carry_category_and_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = tgt(&["train", "-o", "o"], dir.path());
    assert_eq!(missing.status.code(), Some(3));
    assert_eq!(error_category(&missing), "io");
    assert!(String::from_utf8_lossy(&missing.stderr).contains("train.jsonl"));

    std::fs::write(dir.path().join("bad.toml"), "[optim]\nstepz = 3\n").unwrap();
    let bad = tgt(&["train", "-c", "bad.toml"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(error_category(&bad), "config");

    std::fs::write(dir.path().join("ckpt.toml"), "[data]\ntrain_count = 2\ntest_count = 2\nmin_nodes = 4\nmax_nodes = 4\n").unwrap();
    assert!(tgt(&["gen-data", "-c", "ckpt.toml"], dir.path()).status.success());
    let no_ckpt = tgt(&["eval", "-c", "ckpt.toml", "-o", "empty"], dir.path());
    assert_eq!(error_category(&no_ckpt), "io");
    assert!(String::from_utf8_lossy(&no_ckpt.stderr).contains("distance.ckpt"));
}

#[test]
fn non_finite_loss_aborts_with_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[data]\ntrain_count = 4\ntest_count = 1\nmin_nodes = 4\nmax_nodes = 5\n\
               [distance_model]\nnum_layers = 1\nnode_dim = 8\nedge_dim = 4\nheads = 2\nnode_ffn_dim = 8\nedge_ffn_dim = 8\n\
               [optim]\nsteps = 50\nbatch_size = 2\nlr = 1e300\nmin_lr = 1e300\nwarmup_steps = 0\nclip_norm = 0.0\n";
    std::fs::write(dir.path().join("c.toml"), cfg).unwrap();
    assert!(tgt(&["gen-data", "-c", "c.toml"], dir.path()).status.success());
    let out = tgt(&["train", "-c", "c.toml"], dir.path());
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_category(&out), "numeric");
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));
}
