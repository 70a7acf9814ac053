use std::path::Path;
use std::process::{Command, Output};

fn dpad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpad")).args(args).output().expect("binary runs")
}

fn ok_json(args: &[&str]) -> serde_json::Value {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    let out = dpad(&full);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json output")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn accountant_reproduces_reference_epsilon() {
    let v = ok_json(&["accountant", "--q", "0.003333", "--sigma", "1", "--steps", "18000", "--delta", "1e-5"]);
    let eps = v["epsilon"].as_f64().unwrap();
    assert!((eps - 3.09).abs() <= 0.25 * 3.09, "{eps}");
    let by_epochs =
        ok_json(&["accountant", "--batch", "200", "--dataset-size", "60000", "--epochs", "60", "--sigma", "1"]);
    assert_eq!(by_epochs["steps"].as_u64(), Some(18000));
}

#[test]
fn bound_origin_case() {
    let v = ok_json(&["bound", "--t", "0.3", "--xi", "0", "--epsilon", "0", "--delta", "0"]);
    assert_eq!(v["bound"].as_f64(), Some(0.3));
    let text = dpad(&["bound", "--t", "0.3", "--epsilon", "2"]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("vacuous"));
}

#[test]
fn calibrate_closed_form() {
    let v = ok_json(&["calibrate", "--epsilon", "0.5", "--delta", "1e-5"]);
    assert!((v["sigma"].as_f64().unwrap() - 9.689610).abs() < 1e-5);
    let out = dpad(&["calibrate", "--epsilon", "2"]);
    assert!(!out.status.success());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = dpad(&["accountant", "--bogus", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus"));
}

#[test]
fn image_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("mix");
    let built =
        ok_json(&["dataset", "build", "--kind", "outlier-mix", "--count", "300", "--ratio", "0.1", "--out", p(&data)]);
    assert_eq!(built["outliers"].as_u64(), Some(30));
    let ckpt = dir.path().join("ae.ckpt");
    let report = dir.path().join("train.jsonl");
    let trained = ok_json(&[
        "train",
        "--data",
        p(&data),
        "--arch",
        "dense-ae",
        "--epochs",
        "2",
        "--batch",
        "50",
        "--lr",
        "0.3",
        "--sigma",
        "1",
        "--clip",
        "1",
        "--out",
        p(&ckpt),
        "--report",
        p(&report),
    ]);
    assert!(trained["epsilon"].as_f64().unwrap() > 0.0);
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 2);
    let scores = dir.path().join("scores.csv");
    let scored = ok_json(&["score", "--model", p(&ckpt), "--data", p(&data), "--out", p(&scores)]);
    assert_eq!(scored["positives"].as_u64(), Some(30));
    let header = std::fs::read_to_string(&scores).unwrap();
    assert!(header.starts_with("id,score,positive,direction\n"));
    let ev = ok_json(&["eval", "--scores", p(&scores), "--curves", p(dir.path())]);
    let aupr = ev["aupr"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&aupr));
    assert!(dir.path().join("pr.csv").exists() && dir.path().join("roc.csv").exists());
    let det = ok_json(&["detect", "--scores", p(&scores), "--threshold", "0.0"]);
    // Everything is flagged at tau = 0.
    assert_eq!(det["flagged"].as_u64(), Some(300));
    assert_eq!(det["counts"]["tp"].as_u64(), Some(30));
}

#[test]
fn sequence_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("logs");
    let built = ok_json(&[
        "dataset",
        "build",
        "--kind",
        "sequences",
        "--vocab",
        "12",
        "--normal",
        "40",
        "--abnormal",
        "10",
        "--out",
        p(&data),
    ]);
    assert_eq!(built["sessions"].as_u64(), Some(50));
    let ckpt = dir.path().join("lm.ckpt");
    ok_json(&[
        "train",
        "--data",
        p(&data),
        "--arch",
        "lstm",
        "--history",
        "4",
        "--epochs",
        "1",
        "--batch",
        "32",
        "--lr",
        "0.5",
        "--out",
        p(&ckpt),
    ]);
    let det = ok_json(&["detect", "--model", p(&ckpt), "--data", p(&data), "--top-k", "3"]);
    let c = &det["counts"];
    let total: u64 = ["tp", "fp", "tn", "fn"].iter().map(|k| c[*k].as_u64().unwrap()).sum();
    assert_eq!(total, 50);
    assert_eq!(c["tp"].as_u64().unwrap() + c["fn"].as_u64().unwrap(), 10);
    let scored = ok_json(&["score", "--model", p(&ckpt), "--data", p(&data)]);
    assert_eq!(scored["scores"][0]["direction"], "lower-is-anomalous");
    let bad = dpad(&["detect", "--model", p(&ckpt), "--data", p(&data)]);
    assert!(!bad.status.success());
}

#[test]
fn model_and_data_mismatch_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("digits");
    ok_json(&["dataset", "build", "--kind", "digits", "--count", "20", "--out", p(&data)]);
    let out = dpad(&["train", "--data", p(&data), "--arch", "lstm", "--out", p(&dir.path().join("x.ckpt"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("session data"));
}

const TINY_EXPERIMENT: &str = r#"
name = "cli-tiny"
seeds = [1]

[experiment]
kind = "outlier"
train_size = 100
outlier_ratios = [0.1]
nd_normal = 20
nd_novel = 20
sigmas = [1.0]

[experiment.normal]
source = "synthetic"
train_pool = 200
test_pool = 60

[experiment.outliers]
source = "synthetic"
train_pool = 200
test_pool = 60

[experiment.model]
kind = "dense-autoencoder"
widths = [784, 4, 784]

[experiment.training]
learning_rate = 0.3
batch_size = 50
epochs = 1
"#;

#[test]
fn experiment_run_rerun_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, TINY_EXPERIMENT).unwrap();
    let a = dir.path().join("a");
    let run = ok_json(&["experiment", "run", "--config", p(&cfg), "--out", p(&a)]);
    assert_eq!(run["runs"].as_u64(), Some(3));
    let b = dir.path().join("b");
    let manifest = a.join("manifest.json");
    let rerun = ok_json(&["experiment", "run", "--manifest", p(&manifest), "--out", p(&b)]);
    assert_eq!(rerun["identical"], true);
    assert_eq!(std::fs::read(a.join("outlier.csv")).unwrap(), std::fs::read(b.join("outlier.csv")).unwrap());

    // A tampered output hash makes the rerun report a difference.
    let text = std::fs::read_to_string(&manifest).unwrap();
    let mut m: serde_json::Value = serde_json::from_str(&text).unwrap();
    m["outputs"]["outlier.csv"] = "00".into();
    std::fs::write(&manifest, m.to_string()).unwrap();
    let out = dpad(&["experiment", "run", "--manifest", p(&manifest), "--out", p(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("output outlier.csv differs"));

    let rep = dpad(&["report", "--dir", p(&b)]);
    assert!(rep.status.success());
    let text = String::from_utf8_lossy(&rep.stdout);
    assert!(text.contains("outlier.csv"));
    assert!(text.contains("mean"));
    assert!(text.lines().any(|l| l.starts_with("config_id  ")), "report is aligned, not raw CSV");
}

#[test]
fn preset_dry_run_prints_config() {
    let out = dpad(&["experiment", "run", "--preset", "desk-outlier", "--seeds", "4,5", "--dry-run"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("seeds = [4, 5]"));
    assert!(text.contains("kind = \"outlier\""));
}

#[test]
fn invalid_config_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, TINY_EXPERIMENT.replace("seeds = [1]", "seeds = [1, 1]")).unwrap();
    let out = dpad(&["experiment", "run", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("distinct"));
}
