mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{world, write_jsonl};

fn pricenego(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pricenego"))
        .args(args)
        .current_dir(dir)
        .env_remove("PRICENEGO_CHECKPOINT")
        .env_remove("PRICENEGO_BIND")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const CONFIG: &str = r#"{
  "model": { "dim": 8, "neighbors": 4, "head_hidden": 8, "rnn_layers": 1, "max_tokens": 12 },
  "train": { "schedule": [[2, 0.001]], "batch_size": 8, "dropout": 0.0, "rl_episodes": 6, "rl_max_turns": 8 }
}"#;

#[test]
fn train_selfplay_evaluate_and_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let w = world();
    write_jsonl(&d.join("scenarios.jsonl"), &w.scenarios);
    write_jsonl(&d.join("dialogues.jsonl"), &w.dialogues);
    write_jsonl(&d.join("catalog.jsonl"), &w.catalog);
    std::fs::write(d.join("item.json"), serde_json::to_string(&w.catalog[3]).unwrap()).unwrap();
    std::fs::write(d.join("config.json"), CONFIG).unwrap();
    let data = ["--scenarios", "scenarios.jsonl", "--catalog", "catalog.jsonl"];

    let early = pricenego(d, &[&["train-sl"][..], &data, &["--dialogues", "dialogues.jsonl", "--ckpt", "missing.bin", "--out", "x.bin"]].concat());
    assert!(!early.status.success());
    assert!(String::from_utf8_lossy(&early.stderr).contains("missing.bin"));

    let args = [&["train-ove"][..], &data, &["--dialogues", "dialogues.jsonl", "--config", "config.json", "--metrics", "ove.csv", "--out", "ove.bin"]].concat();
    ok(&pricenego(d, &args));
    let csv = std::fs::read_to_string(d.join("ove.csv")).unwrap();
    assert!(csv.starts_with("stage,step,value,lr\nove,0,"));

    let rl_first = pricenego(d, &[&["train-rl"][..], &data, &["--ckpt", "ove.bin", "--config", "config.json", "--out", "x.bin"]].concat());
    assert!(!rl_first.status.success(), "reinforcement needs supervised training first");

    let args = [&["train-sl"][..], &data, &["--dialogues", "dialogues.jsonl", "--ckpt", "ove.bin", "--config", "config.json", "--out", "sl.bin"]].concat();
    ok(&pricenego(d, &args));
    let args = [&["train-rl"][..], &data, &["--ckpt", "sl.bin", "--config", "config.json", "--out", "rl.bin"]].concat();
    assert!(ok(&pricenego(d, &args)).contains("6 episodes"));

    let args = [&["selfplay"][..], &data, &["--ckpt", "rl.bin", "--n", "9", "--out", "gen.jsonl"]].concat();
    ok(&pricenego(d, &args));
    let generated = std::fs::read_to_string(d.join("gen.jsonl")).unwrap();
    assert_eq!(generated.lines().count(), 9);
    assert!(!generated.contains("<price>"));

    let table = ok(&pricenego(d, &["eval", "--gen", "gen.jsonl", "--ref", "dialogues.jsonl", "--scenarios", "scenarios.jsonl"]));
    assert!(table.contains("IBLEU"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    for key in [
        "ibleu",
        "bleu",
        "sentence_diversity",
        "vocab_diversity",
        "avg_dialogue_length",
        "price_inconsistency_rate",
        "offer_inconsistency_rate",
        "human_divergence",
    ] {
        assert!(report.get(key).is_some(), "{key}");
    }

    let est: serde_json::Value = serde_json::from_str(&ok(&pricenego(d, &["estimate", "--item", "item.json", "--catalog", "catalog.jsonl", "--ckpt", "rl.bin"]))).unwrap();
    assert!(est["estimate"].as_f64().unwrap() > 0.0);
    let neighbors = est["neighbors"].as_array().unwrap();
    assert_eq!(neighbors.len(), 4);
    let total: f64 = neighbors.iter().map(|n| n["weight"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9, "{total}");
    assert!(neighbors.iter().all(|n| n["id"] != w.catalog[3].id.as_str()));
}

#[test]
fn bad_invocations_fail_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = pricenego(dir.path(), &["selfplay", "--frobnicate"]);
    assert!(!unknown.status.success());
    assert!(!unknown.stderr.is_empty());
    let missing = pricenego(dir.path(), &["eval", "--gen", "a.jsonl", "--ref", "b.jsonl", "--scenarios", "c.jsonl"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
    std::fs::write(dir.path().join("bad.json"), r#"{"train":{"batch_size":0}}"#).unwrap();
    std::fs::write(dir.path().join("s.jsonl"), "").unwrap();
    let bad = pricenego(
        dir.path(),
        &["train-ove", "--scenarios", "s.jsonl", "--dialogues", "s.jsonl", "--config", "bad.json", "--out", "m.bin"],
    );
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("batch_size"));
}

#[test]
fn chat_reads_commands_from_stdin() {
    use std::io::Write;
    use std::process::Stdio;
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let w = world();
    write_jsonl(&d.join("scenarios.jsonl"), &w.scenarios);
    let model = pricenego::model::Negotiator::new(common::tiny_config(), w.vocabulary());
    model.save(d.join("m.bin")).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_pricenego"))
        .args(["chat", "--scenarios", "scenarios.jsonl", "--scenario", "s001", "--log", "sessions.jsonl"])
        .env("PRICENEGO_CHECKPOINT", "m.bin")
        .current_dir(d)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"/accept\nhello , is it available ?\n/quit\n/rate 4 4 4\n").unwrap();
    let out = child.wait_with_output().unwrap();
    let text = ok(&out);
    assert!(text.contains("!! "), "accept with nothing pending is refused");
    assert!(text.contains("== no deal"));
    assert!(text.contains("rating saved"));
    assert!(std::fs::read_to_string(d.join("sessions.jsonl")).unwrap().contains("\"kind\":\"rating\""));
}
