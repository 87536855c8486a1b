use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::{json, Value};

fn follower(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_follower")).args(args).output().unwrap();
    assert!(out.status.success(), "follower {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn small_synth(dir: &Path) -> String {
    let cfg = dir.join("synth.json");
    fs::write(
        &cfg,
        json!({"objects": 8, "sequences_per_object": 3, "frames": 4, "dim": 6, "intra_object_sigma": 0.5}).to_string(),
    )
    .unwrap();
    let out = dir.join("data");
    follower(&["synth", "--out", out.to_str().unwrap(), "--config", cfg.to_str().unwrap()]).trim().to_string()
}

#[test]
fn synth_then_cmc() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_synth(dir.path());
    assert!(manifest.ends_with("manifest.json"));
    let out = follower(&["cmc", "--manifest", &manifest, "--folds", "5", "--objects", "4,8"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["folds"], json!(5));
    assert_eq!(v["points"].as_array().unwrap().len(), 2);
    assert_eq!(v["points"][1]["objects"], json!(8));
}

#[test]
fn convert_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("frames.csv");
    fs::write(&csv, "a,mug,0.5,1.0\na,mug,0.25,2.0\nb,,1.0,1.0\n").unwrap();
    let out = dir.path().join("conv");
    let printed = follower(&["convert", "--csv", csv.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(printed.contains("2 sequences"), "{printed}");
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest[0]["row_count"], json!(2));
    assert_eq!(manifest[1]["object_label"], Value::Null);
}

#[test]
fn run_writes_identical_outputs_twice() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_synth(dir.path());
    let config = dir.path().join("run.json");
    fs::write(
        &config,
        json!({
            "dataset": {"manifest": manifest},
            "train_policy": {"kind": "devel"},
            "alpha": 0.5,
            "bootstrap_queries": 3,
            "folds": 3,
            "heldout_count": 2,
            "seed": 9
        })
        .to_string(),
    )
    .unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    follower(&["run", "--config", config.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    follower(&["run", "--config", config.to_str().unwrap(), "--out", b.to_str().unwrap(), "--threads", "1"]);
    for f in ["summary.json", "curves.csv", "config.json", "fold_0/trace.csv", "fold_2/trace.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["ami_normalization"], "max");
}

#[test]
fn bad_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    fs::write(&config, r#"{"dataset":{"synthetic":{}},"train_policy":{"kind":"random"},"alpha":2.0}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_follower"))
        .args(["run", "--config", config.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha") || !out.stderr.is_empty());
}
