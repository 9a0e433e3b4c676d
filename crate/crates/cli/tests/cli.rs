//! End-to-end exercises of the `driveval` binary: artifact formats, exit
//! codes, and the re-run determinism contract.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_driveval"))
}

fn run_ok(args: &[&str]) {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tmp(dir: &tempfile::TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn town_export_has_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let path = tmp(&dir, "town.json");
    run_ok(&["town", "--id", "A", "--seed", "0", "--out", &s(&path)]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["format"], "driveval-town/1");
    assert_eq!(v["intersections"].as_array().unwrap().len(), 16);
    assert_eq!(v["segments"].as_array().unwrap().len(), 48);
}

#[test]
fn eval_online_is_rerun_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = tmp(&dir, "a.json");
    let b = tmp(&dir, "b.json");
    for path in [&a, &b] {
        run_ok(&[
            "eval-online",
            "--policy",
            "expert",
            "--town",
            "A",
            "--trials",
            "3",
            "--seed",
            "1",
            "--out",
            &s(path),
        ]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(v["format"], "driveval-online-report/1");
    assert!(v["config_hash"].is_string());
    assert_eq!(v["report"]["trials"], 3);
}

#[test]
fn collect_train_eval_offline_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = tmp(&dir, "train.csv");
    let model = tmp(&dir, "model.json");
    let val = tmp(&dir, "val.csv");
    let report = tmp(&dir, "offline.json");
    run_ok(&[
        "collect", "--town", "A", "--hours", "0.01", "--cameras", "3cam", "--noise", "--seed",
        "5", "--out", &s(&data),
    ]);
    run_ok(&[
        "train", "--data", &s(&data), "--loss", "l1", "--ridge", "0.001", "--balancing",
        "--depth", "standard", "--seed", "2", "--out", &s(&model),
    ]);
    run_ok(&[
        "collect", "--town", "A", "--hours", "0.005", "--cameras", "1cam", "--seed", "9",
        "--out", &s(&val),
    ]);
    run_ok(&[
        "eval-offline", "--policy", &s(&model), "--data", &s(&val), "--out", &s(&report),
    ]);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["format"], "driveval-offline-report/1");
    assert_eq!(v["report"]["n"], 180);
    assert!(v["report"]["mse"].as_f64().unwrap() >= 0.0);
}

fn mini_config(dir: &tempfile::TempDir) -> PathBuf {
    let path = tmp(dir, "mini.toml");
    std::fs::write(
        &path,
        r#"
format = "driveval-study/1"
master_seed = 7
towns = ["A", "B"]
validation_hours = 0.005
train_hours = 0.02
trials = 2
include_expert = true

[conditions]
A = "clear"
B = "softshift"

[offline_params]
window = 16
sigma = 0.03
alpha = 0.1

[[trained]]
id = "t-a"
loss = "l2"
ridge = 0.001
balancing = true
feature_depth = "standard"
data_hours = 0.02
data_distribution = "3cam+noise"

[[trained]]
id = "t-b"
loss = "l2"
ridge = 0.001
balancing = false
feature_depth = "standard"
data_hours = 0.02
data_distribution = "3cam+noise"

[[perturbed]]
id = "z-w"
spec = { type = "white_noise", std = 0.1 }

[[groups]]
axis = "balancing"
models = ["t-a", "t-b"]
"#,
    )
    .unwrap();
    path
}

#[test]
fn study_correlate_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini_config(&dir);
    let study = tmp(&dir, "study.jsonl");
    run_ok(&["study", "--config", &s(&cfg), "--out", &s(&study)]);
    let lines = std::fs::read_to_string(&study).unwrap();
    assert_eq!(lines.lines().count(), 4);
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp(&dir, "study.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["format"], "driveval-study/1");
    assert!(manifest["config_hash"].is_string());

    let corr = tmp(&dir, "corr.json");
    run_ok(&[
        "correlate", "--in", &s(&study), "--filter-best", "mse:0.5", "--out", &s(&corr),
    ]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&corr).unwrap()).unwrap();
    assert_eq!(v["format"], "driveval-correlation/1");
    assert_eq!(v["filter"]["metric"], "mse");

    let figs = tmp(&dir, "figs");
    run_ok(&["report", "--in", &s(&study), "--out-dir", &s(&figs)]);
    let svgs = std::fs::read_dir(&figs)
        .unwrap()
        .filter(|e| {
            e.as_ref().unwrap().path().extension().map(|x| x == "svg").unwrap_or(false)
        })
        .count();
    assert!(svgs > 0, "report produced no SVG scatters");
}

#[test]
fn usage_error_exits_2_and_domain_error_exits_1() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2), "unknown subcommand should exit 2");

    let out = bin()
        .args(["eval-online", "--policy", "expert", "--town", "Z", "--out", "/tmp/never.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "bad town is a domain error");
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown town"));
}

#[test]
fn out_dir_env_var_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .env("DRIVEVAL_OUT", dir.path())
        .args(["town", "--id", "B", "--out", "town_b.json"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("town_b.json").exists());
}
