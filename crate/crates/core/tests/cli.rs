//! The `crossmodal` binary end to end on a small dataset.

use std::path::Path;
use std::process::{Command, Output};

fn crossmodal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossmodal")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = crossmodal(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pipeline_with_all_query_modes() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model, report, history) = (
        dir.path().join("d.jsonl"),
        dir.path().join("m.ckpt"),
        dir.path().join("r.json"),
        dir.path().join("h.csv"),
    );
    let (data, model, report, history) = (s(&data), s(&model), s(&report), s(&history));

    let out = ok(&["gen-data", "--seed", "3", "--classes", "4", "--instances", "10", "--out", data]);
    assert!(out.starts_with("wrote 40 pairs (4 classes"), "{out}");
    let header = std::fs::read_to_string(data).unwrap();
    assert!(header.lines().next().unwrap().contains("schema_version"));

    let out = ok(&["train", "--data", data, "--seed", "3", "--epochs", "3", "--batch-size", "8", "--out", model, "--history", history]);
    assert_eq!(out.lines().filter(|l| l.starts_with("epoch")).count(), 3);
    assert_eq!(std::fs::read_to_string(history).unwrap().lines().count(), 4);

    let out = ok(&["eval", "--data", data, "--model", model, "--split", "all", "--bag-size", "20", "--bags", "2", "--out", report]);
    assert!(out.contains("image->recipe") && out.contains("recipe->image"), "{out}");
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(doc["pairs"], 40);
    assert_eq!(doc["reports"].as_array().unwrap().len(), 2);

    let out = ok(&["query", "--data", data, "--model", model, "-k", "3", "cross", "--from", "recipe", "--id", "00005", "--to", "recipe"]);
    let first = out.lines().nth(2).unwrap();
    assert!(first.contains("00005") && first.contains("0.000000"), "{out}");

    let json = ok(&["query", "--data", data, "--model", model, "--json", "-k", "5", "ingredients", "--tokens", "c01_sig0,c02_sig0", "--class", "class01"]);
    let hits: Vec<serde_json::Value> = serde_json::from_str(&json).unwrap();
    assert_eq!(hits.len(), 5);
    assert!(hits.iter().all(|h| h["class_id"] == 1));

    let out = ok(&["query", "--data", data, "--model", model, "ingredients", "--tokens", "c01_sig0", "--class", "nope"]);
    assert!(out.contains("no items in the requested class"), "{out}");

    let out = ok(&["query", "--data", data, "--model", model, "remove", "--id", "00005", "--token", "c00_sig0"]);
    assert!(out.contains("without \"c00_sig0\"") && out.contains("before") && out.contains("after"), "{out}");

    let bad = crossmodal(&["query", "--data", data, "--model", model, "ingredients", "--tokens", "saffron"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("saffron"));
}

#[test]
fn config_file_supplies_paths_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("pairs.jsonl");
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!("seed = 5\n[synth]\nn_classes = 3\ninstances_per_class = 4\n[paths]\ndata = {:?}\n", s(&data)),
    )
    .unwrap();
    let out = ok(&["--config", s(&config), "gen-data"]);
    assert!(out.starts_with("wrote 12 pairs"), "{out}");
    let out = ok(&["--config", s(&config), "gen-data", "--instances", "6"]);
    assert!(out.starts_with("wrote 18 pairs"), "{out}");

    std::fs::write(&config, "[train]\nepoch = 3\n").unwrap();
    let bad = crossmodal(&["--config", s(&config), "gen-data", "--out", s(&data)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("epoch"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(crossmodal(&["train", "--epochs", "many"]).status.code(), Some(2));
    assert_eq!(crossmodal(&[]).status.code(), Some(2));
    assert_eq!(crossmodal(&["--help"]).status.code(), Some(0));
}
