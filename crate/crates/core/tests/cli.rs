use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dmn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json_lines(bytes: &[u8]) -> Vec<Value> {
    String::from_utf8_lossy(bytes)
        .lines()
        .filter(|l| l.starts_with('{'))
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model.dmnb");
    let preds = dir.path().join("preds.jsonl");

    let out = dmn(&[
        "synth",
        "--train-size",
        "60",
        "--dev-size",
        "30",
        "--test-size",
        "30",
        "--seed",
        "4",
        "--out",
        path(&data),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ["train.jsonl", "dev.jsonl", "test.jsonl", "spec.json"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let out = dmn(&[
        "train",
        "--data",
        path(&data),
        "--hidden",
        "8",
        "--epochs",
        "2",
        "--out",
        path(&model),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let epochs = json_lines(&out.stdout);
    assert_eq!(epochs.len(), 2);
    assert_eq!(epochs[1]["epoch"], 2);
    assert!(epochs[0]["dev_accuracy"].is_number());
    assert!(String::from_utf8_lossy(&out.stderr).contains("test accuracy"));

    let out = dmn(&[
        "eval",
        "--model",
        path(&model),
        "--data",
        path(&data.join("dev.jsonl")),
        "--predictions",
        path(&preds),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = &json_lines(&out.stdout)[0];
    assert_eq!(summary["examples"], 30);
    let acc = summary["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let preds = std::fs::read_to_string(&preds).unwrap();
    assert_eq!(preds.lines().count(), 30);

    let again = dmn(&[
        "eval",
        "--model",
        path(&model),
        "--data",
        path(&data.join("dev.jsonl")),
    ]);
    assert_eq!(again.stdout, out.stdout);
}

#[test]
fn gradcheck_reports_every_tensor() {
    let out = dmn(&["gradcheck", "--hidden", "3", "--seed", "2"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let lines = json_lines(&out.stdout);
    assert_eq!(lines.len(), 21);
    assert_eq!(lines[20]["passed"], true);
    assert!(lines[..20]
        .iter()
        .all(|l| l["max_rel_error"].as_f64().unwrap() <= 1e-4));
}

#[test]
fn errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dmn(&[
        "eval",
        "--model",
        path(&dir.path().join("missing.dmnb")),
        "--data",
        "x.jsonl",
    ]);
    assert!(!out.status.success());
    let err = &json_lines(&out.stderr)[0];
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("missing.dmnb"));

    let corrupt = dir.path().join("bad.dmnb");
    std::fs::write(&corrupt, b"DMNB not really a bundle").unwrap();
    let out = dmn(&["eval", "--model", path(&corrupt), "--data", "x.jsonl"]);
    assert!(!out.status.success());
    assert_eq!(json_lines(&out.stderr)[0]["error"], "integrity");

    let out = dmn(&["train", "--epochs", "many"]);
    assert!(!out.status.success());
    assert_eq!(json_lines(&out.stderr)[0]["error"], "usage");

    let out = dmn(&["train", "--encoder", "precomputed", "--epochs", "1"]);
    assert!(!out.status.success());
    assert_eq!(json_lines(&out.stderr)[0]["error"], "config");

    assert!(dmn(&["--help"]).status.success());
}
