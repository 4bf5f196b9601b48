use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ctxfusion"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &str = r#"{"primary_capsules": 4, "primary_dim": 8, "output_capsules": 2,
  "output_dim": 8, "fc_units": 16, "rnn_units": 8}"#;

fn synth(dir: &Path, name: &str, structure: &str, n: &str) -> PathBuf {
    let out = p(dir, name);
    let o = run(&["synth", "--n", n, "--structure", structure, "--seed", "7", "--d-text", "8", "--d-image", "8", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn small_config(dir: &Path) -> PathBuf {
    let cfg = p(dir, "small.json");
    std::fs::write(&cfg, SMALL).unwrap();
    cfg
}

#[test]
fn synth_is_deterministic_and_counts_records() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.jsonl", "xor", "50");
    let b = synth(dir.path(), "b.jsonl", "xor", "50");
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 50);
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
}

#[test]
fn bad_structure_and_unknown_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "x.jsonl");
    let o = run(&["synth", "--n", "10", "--structure", "bogus", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    assert_eq!(run(&["synth", "--n", "10", "--structure", "xor", "--out", s(&out), "--frobnicate"]).status.code(), Some(2));
    let o = run(&["synth", "--n", "10", "--structure", "xor", "--out", "/nonexistent-dir/x.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_learning_rate_keeps_the_parameter_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.jsonl", "xor", "80");
    let cfg = small_config(dir.path());
    let out = p(dir.path(), "r.json");
    let o = run(&["train", "--data", s(&data), "--config", s(&cfg), "--lr", "0", "--epochs", "2", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out);
    assert_eq!(r["initial_param_checksum"], r["final_param_checksum"]);
    assert_eq!(r["history"].as_array().unwrap().len(), 2);
    assert_eq!(r["config"]["learning_rate"], 0.0);
    assert_eq!(r["config"]["primary_dim"], 8);

    let moved = p(dir.path(), "m.json");
    assert!(run(&["train", "--data", s(&data), "--config", s(&cfg), "--epochs", "2", "--out", s(&moved)]).status.success());
    let m = read_json(&moved);
    assert_ne!(m["initial_param_checksum"], m["final_param_checksum"]);
    assert_eq!(m["initial_param_checksum"], r["initial_param_checksum"]);
}

#[test]
fn train_and_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.jsonl", "unimodal-text", "80");
    let cfg = small_config(dir.path());
    let (a, b, params) = (p(dir.path(), "a.json"), p(dir.path(), "b.json"), p(dir.path(), "params.json"));
    for out in [&a, &b] {
        let o = run(&["train", "--data", s(&data), "--config", s(&cfg), "--seed", "7", "--epochs", "3", "--out", s(out), "--save-params", s(&params)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let r = read_json(&a);
    for key in ["artifact_version", "seed", "config", "history", "final_metrics"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    let ev = p(dir.path(), "eval.json");
    let o = run(&["eval", "--data", s(&data), "--params", s(&params), "--out", s(&ev)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["eval", "--data", s(&data), "--params", s(&params), "--json"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).expect("json on stdout");
    assert!(v.to_string().contains("accuracy"));
}

#[test]
fn missing_manifest_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = p(dir.path(), "none.jsonl");
    let out = p(dir.path(), "r.json");
    assert_eq!(run(&["train", "--data", s(&missing), "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(run(&["ablate", "--data", s(&missing), "--out", s(&out)]).status.code(), Some(2));
    let bad = p(dir.path(), "bad.jsonl");
    std::fs::write(&bad, "{not json}\n").unwrap();
    assert_eq!(run(&["train", "--data", s(&bad), "--out", s(&out)]).status.code(), Some(2));
}

#[test]
fn divergence_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.jsonl", "xor", "40");
    let cfg = small_config(dir.path());
    let out = p(dir.path(), "r.json");
    let o = run(&["train", "--data", s(&data), "--config", s(&cfg), "--lr", "1e300", "--epochs", "2", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gradcheck_passes_covers_every_tensor_and_catches_sign_flip() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "g.json");
    let o = run(&["gradcheck", "--seed", "7", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let r = read_json(&out);
    let names: Vec<&str> = r["tensors"].as_array().unwrap().iter().map(|t| t["name"].as_str().unwrap()).collect();
    let mut unique = names.clone();
    unique.sort_unstable();
    unique.dedup();
    assert_eq!(unique.len(), names.len());
    assert_eq!(names.len(), 18);
    assert!(r["tensors"].as_array().unwrap().iter().all(|t| t["max_rel_error"].as_f64().unwrap() < 1e-4));

    let o = run(&["gradcheck", "--seed", "7", "--mutate", "sign-flip", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(read_json(&out)["max_rel_error"].as_f64().unwrap() > 0.1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("routing.w") || String::from_utf8_lossy(&o.stdout).contains("routing.w"));
}

fn text_manifest(dir: &Path, with_text: bool) -> PathBuf {
    let path = p(dir, "raw.jsonl");
    let mut lines = String::new();
    for i in 0..6 {
        let text = if with_text || i != 3 { format!(r#","raw_text":"flooding near bridge {i}""#) } else { String::new() };
        lines.push_str(&format!(r#"{{"id":"r{i}","label":{}{text}}}"#, i % 2));
        lines.push('\n');
    }
    std::fs::write(&path, lines).unwrap();
    path
}

#[test]
fn embed_is_deterministic_and_respects_the_identity_template() {
    let dir = tempfile::tempdir().unwrap();
    let input = text_manifest(dir.path(), true);
    let (a, b, c) = (p(dir.path(), "a.jsonl"), p(dir.path(), "b.jsonl"), p(dir.path(), "c.jsonl"));
    let common = ["--in", s(&input), "--d-text", "16", "--d-image", "8"];
    for out in [&a, &b] {
        let o = bin().arg("embed").args(common).args(["--mode", "prompt", "--out", s(out)]).output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let o = bin().arg("embed").args(common).args(["--mode", "prompt", "--template", "{text}", "--out", s(&c)]).output().unwrap();
    assert!(o.status.success());
    let simple = p(dir.path(), "s.jsonl");
    assert!(bin().arg("embed").args(common).args(["--mode", "simple", "--out", s(&simple)]).output().unwrap().status.success());
    assert_eq!(std::fs::read(&c).unwrap(), std::fs::read(&simple).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&simple).unwrap());
    let first: Value = serde_json::from_str(std::fs::read_to_string(&a).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["text_embedding"].as_array().unwrap().len(), 16);
    assert_eq!(first["image_embedding"].as_array().unwrap().len(), 8);
}

#[test]
fn embed_names_the_record_missing_text() {
    let dir = tempfile::tempdir().unwrap();
    let input = text_manifest(dir.path(), false);
    let out = p(dir.path(), "o.jsonl");
    let o = run(&["embed", "--in", s(&input), "--out", s(&out), "--d-text", "16", "--d-image", "8"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("r3"));
}

#[test]
fn ablate_writes_six_rows_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.jsonl", "xor", "60");
    let cfg = small_config(dir.path());
    let (a, b) = (p(dir.path(), "a.json"), p(dir.path(), "b.json"));
    for out in [&a, &b] {
        let o = run(&["ablate", "--data", s(&data), "--config", s(&cfg), "--epochs", "2", "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let r = read_json(&a);
    let rows = r["ablation"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[5]["label"], "Contextual-Attention (Ours)");
}
