use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;

fn purgemix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_purgemix")).args(args).output().unwrap()
}

fn write_fixture(dir: &Path) -> String {
    let mut corpus = String::new();
    let mut embeddings = String::new();
    let mut replies = Vec::new();
    for i in 0..3 {
        let id = format!("s{i}");
        corpus += &format!(
            "{}\n",
            json!({"id": id, "instruction": format!("Question {i}?"), "input": "", "response": "Answer.", "source": "cli"})
        );
        embeddings += &format!("{}\n", json!({"id": id, "vector": [1.0, i as f64, 0.5]}));
        replies.push(json!({"rarity": 3, "complexity": 4, "informativeness": 5, "overall": 5 + i}).to_string());
    }
    std::fs::write(dir.join("corpus.jsonl"), corpus).unwrap();
    std::fs::write(dir.join("embeddings.jsonl"), embeddings).unwrap();
    std::fs::write(dir.join("script.json"), json!({"mode": "by_index", "replies": replies}).to_string()).unwrap();
    let config = dir.join("purgemix.toml");
    std::fs::write(
        &config,
        "inputs = [\"corpus.jsonl\"]\nembeddings = \"embeddings.jsonl\"\noutput_dir = \"out\"\n\
         transport = \"mock\"\nmock_script = \"script.json\"\nconcurrency = 1\n",
    )
    .unwrap();
    config.to_str().unwrap().to_string()
}

#[test]
fn rate_then_status_with_a_scripted_model() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path());

    let out = purgemix(&["rate", "--config", &config]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("rated: 3"), "{stdout}");

    let ratings = std::fs::read_to_string(dir.path().join("out/ratings.jsonl")).unwrap();
    assert_eq!(ratings.lines().count(), 3);

    let out = purgemix(&["status", "--config", &config]);
    assert!(out.status.success());
    let state: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(state["stages"]["rate"]["completed"], json!(true));

    let again = purgemix(&["rate", "--config", &config]);
    assert!(String::from_utf8(again.stdout).unwrap().contains("skipped"));
}

#[test]
fn out_of_order_stage_fails_with_a_hint() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path());
    let out = purgemix(&["split", "--config", &config]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("run rate first"));
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path());
    let out = purgemix(&["rate", "--config", &config, "--budget", "0"]);
    assert!(!out.status.success());
}

#[test]
fn prompts_are_written_for_editing() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("pack");
    let out = purgemix(&["prompts", "--out", target.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(target.join("manifest.toml").exists());
    assert!(std::fs::read_dir(&target).unwrap().count() > 5);
}
