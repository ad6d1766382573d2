use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn depthforge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depthforge")).current_dir(dir).args(args).output().expect("spawn depthforge")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = depthforge(dir, args);
    assert!(
        out.status.success(),
        "depthforge {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn end_to_end_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("train.json"),
        r#"{"epochs": 2, "pairs_per_epoch": 128, "learning_rate": 0.01,
            "widths": {"point": [8, 16], "recon": [8], "head": [8]}}"#,
    )
    .unwrap();

    ok(d, &["synth", "--out", "corpus", "--count", "150", "--seed", "3"]);
    let manifest = lines(&d.join("corpus/manifest.jsonl"));
    assert_eq!(manifest.len(), 150);
    assert!(d.join("corpus/truth").read_dir().unwrap().count() == 150);

    ok(d, &["reconstruct", "corpus/matches", "--out", "recons.jsonl", "--rejects", "rejects.jsonl", "--seed", "3"]);
    let n_recons = lines(&d.join("recons.jsonl")).len();
    let n_rejects = lines(&d.join("rejects.jsonl")).len();
    assert_eq!(n_recons + n_rejects, 150);
    let rejected_in_manifest = manifest.iter().filter(|m| !m["rejected"].is_null()).count();
    assert_eq!(n_rejects, rejected_in_manifest);

    ok(d, &["cues", "--recons", "recons.jsonl", "--out", "cues.jsonl"]);
    ok(d, &[
        "train-qanet", "--cues", "cues.jsonl", "--manifest", "corpus/manifest.jsonl", "--out", "model.json",
        "--log", "train.csv", "--config", "train.json",
    ]);
    let log = fs::read_to_string(d.join("train.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    ok(d, &["score", "--model", "model.json", "--cues", "cues.jsonl", "--out", "scores.jsonl"]);
    let summary = ok(d, &[
        "curve", "--scores", "scores.jsonl", "--manifest", "corpus/manifest.jsonl", "--out", "curve.csv",
        "--baselines", "base_",
    ]);
    let summary: Value = serde_json::from_str(summary.trim()).unwrap();
    let auc = summary["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert_eq!(fs::read_to_string(d.join("curve.csv")).unwrap().lines().count(), 101);
    assert!(d.join("base_upper.csv").exists() && d.join("base_random.csv").exists());

    let choice = ok(d, &[
        "choose-threshold", "--scores", "scores.jsonl", "--manifest", "corpus/manifest.jsonl", "--target", "0.0",
    ]);
    let choice: Value = serde_json::from_str(choice.trim()).unwrap();
    assert_eq!(choice["fraction"].as_f64(), Some(1.0));

    for run in ["a", "b"] {
        ok(d, &[
            "forge", "corpus/matches", "--model", "model.json", "--top-fraction", "0.5",
            "--out", &format!("{run}.jsonl"), "--report", &format!("{run}.json"),
        ]);
    }
    let a = fs::read(d.join("a.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, fs::read(d.join("b.jsonl")).unwrap());
    assert_eq!(fs::read(d.join("a.json")).unwrap(), fs::read(d.join("b.json")).unwrap());

    let records = lines(&d.join("a.jsonl"));
    let preds: Vec<String> = records
        .iter()
        .map(|r| {
            let closer: Vec<&Value> = r["pairs"].as_array().unwrap().iter().map(|p| &p["closer"]).collect();
            serde_json::json!({ "image_id": r["image_id"], "closer": closer }).to_string()
        })
        .collect();
    fs::write(d.join("preds.jsonl"), preds.join("\n") + "\n").unwrap();
    let w = ok(d, &["whdr", "--predictions", "preds.jsonl", "--annotations", "a.jsonl"]);
    let w: Value = serde_json::from_str(w.trim()).unwrap();
    assert_eq!(w["whdr"].as_f64(), Some(0.0));
}

#[test]
fn batch_errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert!(!depthforge(d, &["reconstruct", "missing.txt", "--out", "r.jsonl"]).status.success());
    fs::write(d.join("bad.json"), "{not json").unwrap();
    assert!(!depthforge(d, &["synth", "--out", "c", "--count", "1", "--config", "bad.json"]).status.success());
    fs::write(d.join("scores.jsonl"), "{\"pair_id\":\"x\",\"score\":1.0}\n").unwrap();
    fs::write(d.join("manifest.jsonl"), "").unwrap();
    let out = depthforge(d, &[
        "choose-threshold", "--scores", "scores.jsonl", "--manifest", "manifest.jsonl", "--target", "0.5",
    ]);
    assert!(!out.status.success());
}

#[test]
fn per_pair_rejections_do_not_fail_the_batch() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("tiny.txt"), "PAIR tiny 640 480 2\n1 1 2 2\n3 3 4 4\n").unwrap();
    ok(d, &["reconstruct", "tiny.txt", "--out", "r.jsonl", "--rejects", "x.jsonl"]);
    assert_eq!(lines(&d.join("r.jsonl")).len(), 0);
    assert_eq!(lines(&d.join("x.jsonl")).len(), 1);
}
