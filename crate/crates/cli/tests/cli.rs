//! Command-line smoke tests.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn streamcost(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_streamcost")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = streamcost(dir, args);
    assert!(out.status.success(), "streamcost {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = streamcost(dir, args);
    assert!(!out.status.success(), "streamcost {args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

#[test]
fn generate_train_evaluate_optimize() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["generate", "--count", "60", "--seed", "3", "--out", "data"]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("data/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["count"], 60);

    for metric in ["L_p", "S"] {
        ok(dir, &["train", "--metric", metric, "--data", "data", "--seeds", "5", "--epochs", "2", "--hidden", "8", "--out", "models"]);
    }
    assert!(dir.join("models/L_p/seed_5.json").is_file());
    assert!(dir.join("models/S/seed_5.log.csv").is_file());

    let table = ok(dir, &["evaluate", "--data", "data", "--models", "models", "--all", "--out", "eval"]);
    assert!(table.lines().any(|l| l.starts_with("gnn L_p n=")));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report["experiment"], "evaluate");

    // one generated query and its inventory as optimizer input
    let data = fs::read_to_string(dir.join("data/data.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(data.lines().next().unwrap()).unwrap();
    fs::write(dir.join("query.json"), first["graph"]["query"].to_string()).unwrap();
    fs::write(dir.join("hw.json"), first["graph"]["hardware"].to_string()).unwrap();
    let args = ["optimize", "--query", "query.json", "--inventory", "hw.json", "--models", "models", "--k", "5"];
    let chosen: serde_json::Value = serde_json::from_str(&ok(dir, &args)).unwrap();
    assert_eq!(chosen["target"], "L_p");
    assert_eq!(chosen["direction"], "min");
    assert!(chosen["candidates"].as_array().unwrap().len() <= 5);
    assert_eq!(ok(dir, &args), serde_json::to_string_pretty(&chosen).unwrap() + "\n");
}

#[test]
fn bad_input_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["generate", "--count", "5", "--no-label", "--out", "data"]);
    assert!(fails(dir, &["train", "--metric", "latency", "--data", "data", "--out", "m"]).contains("unknown metric"));
    assert!(fails(dir, &["generate", "--family", "star", "--out", "x"]).contains("unknown family"));
    assert!(fails(dir, &["generate", "--override", "stronger-disk-eval", "--out", "x"]).contains("unknown hardware preset"));
    assert!(fails(dir, &["evaluate", "--data", "data", "--models", "nowhere", "--out", "e"]).contains("nowhere"));

    fs::write(dir.join("even.toml"), "[train]\nseeds = [1, 2]\n").unwrap();
    assert!(fails(dir, &["--config", "even.toml", "generate", "--out", "x"]).contains("odd number of seeds"));
    fs::write(dir.join("typo.toml"), "[gen]\nseed = \"seven\"\n").unwrap();
    assert!(fails(dir, &["--config", "typo.toml", "generate", "--out", "x"]).contains("typo.toml"));

    // tampering with the corpus is caught by the manifest hash
    let path = dir.join("data/data.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, format!("{text}{}\n", text.lines().next().unwrap())).unwrap();
    assert!(fails(dir, &["simulate", "--input", "data", "--output", "labeled"]).contains("manifest"));
}

#[test]
fn unlabeled_corpus_can_be_labeled_later() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["generate", "--count", "20", "--no-label", "--out", "raw"]);
    ok(dir, &["generate", "--count", "20", "--out", "direct"]);
    ok(dir, &["simulate", "--input", "raw", "--output", "labeled"]);
    for file in ["data.jsonl", "manifest.json"] {
        assert_eq!(fs::read(dir.join("labeled").join(file)).unwrap(), fs::read(dir.join("direct").join(file)).unwrap(), "{file}");
    }
}
