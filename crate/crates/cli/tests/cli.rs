use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_latent-revise");

const TINY: &str = "\
epochs = 1
batch_size = 16
embed_dim = 8
hidden_dim = 12
latent_dim = 4
predictor_hidden = [6]
retrain_samples = 64
retrain_eval_samples = 32
";

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["transfer", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let out = run(&[
        "transfer",
        "--model",
        p(&missing),
        "--in",
        p(&missing),
        "--out",
        p(&missing),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn full_chain_from_synthetic_data_to_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = root.join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let data = root.join("data");
    let model = root.join("model");
    let classifiers = root.join("classifiers");

    ok(&[
        "--seed",
        "3",
        "synth-data",
        "--out",
        p(&data),
        "--n-per-class",
        "40",
        "--heldout-per-class",
        "5",
    ]);
    for f in ["train.jsonl", "heldout.jsonl", "heldout-negative.jsonl"] {
        assert!(data.join(f).exists(), "{f}");
    }
    let requests = fs::read_to_string(data.join("heldout-negative.jsonl")).unwrap();
    assert_eq!(requests.lines().count(), 5);

    let csv = ok(&[
        "--config",
        p(&config),
        "train",
        "--data",
        p(&data.join("train.jsonl")),
        "--out",
        p(&model),
    ]);
    assert!(csv.lines().next().unwrap().starts_with("epoch"), "{csv}");
    assert_eq!(csv.lines().count(), 2);
    assert!(model.join("meta.json").exists());

    ok(&[
        "train-classifiers",
        "--data",
        p(&data.join("train.jsonl")),
        "--model",
        p(&model),
        "--out",
        p(&classifiers),
        "--epochs",
        "1",
    ]);
    let report = ok(&[
        "--config",
        p(&config),
        "retrain-predictors",
        "--model",
        p(&model),
        "--classifiers",
        p(&classifiers),
    ]);
    assert!(report.contains("accuracy_after"), "{report}");

    let outputs = root.join("out.jsonl");
    ok(&[
        "transfer",
        "--model",
        p(&model),
        "--in",
        p(&data.join("heldout-negative.jsonl")),
        "--out",
        p(&outputs),
        "--target",
        "sentiment=positive",
        "--rounds",
        "3",
    ]);
    let records: Vec<serde_json::Value> = fs::read_to_string(&outputs)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 5);
    for (r, line) in records.iter().zip(requests.lines()) {
        let req: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(r["sentence"], req["sentence"]);
        assert!(r["steps"].as_u64().unwrap() <= 3);
    }

    let csv = ok(&[
        "evaluate",
        "--pred",
        p(&outputs),
        "--orig",
        p(&data.join("heldout-negative.jsonl")),
        "--model",
        p(&model),
        "--lm-corpus",
        p(&data.join("train.jsonl")),
    ]);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "accuracy,ppl,overlap,noun_pct,bleu2,len_pct,key_pct,n"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 8);
    assert_eq!(row[7], "5");
    assert_eq!(row[6], "NA");
    assert!(row[..6].iter().all(|v| v.parse::<f64>().is_ok()), "{row:?}");

    let table = ok(&[
        "evaluate",
        "--pred",
        p(&outputs),
        "--orig",
        p(&data.join("heldout-negative.jsonl")),
        "--table",
    ]);
    assert!(table.contains("overlap"));
}
