use std::path::Path;
use std::process::{Command, Output};

fn plmi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plmi")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(p: &Path) -> usize {
    std::fs::read_to_string(p).unwrap().lines().count()
}

#[test]
fn gen_writes_default_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("pairs.jsonl");
    let report = tmp.path().join("report.json");
    let o = plmi(&["gen", "--out", s(&out), "--report", s(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(lines(&out), 370);
    assert!(String::from_utf8_lossy(&o.stdout).contains("74 one-hop, 296 two-hop"));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["warnings"].as_array().unwrap().len(), 3);
}

#[test]
fn gen_then_sweep_and_heads() {
    let tmp = tempfile::tempdir().unwrap();
    let pairs = tmp.path().join("p.jsonl");
    let o = plmi(&["gen", "--rules", "de_morgan", "--depths", "one_hop", "--canonical", "--exhaustive", "--out", s(&pairs)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(lines(&pairs), 4);

    let sweeps = tmp.path().join("sweeps");
    let o = plmi(&["sweep", "--granularity", "head", "--pairs", s(&pairs), "--out", s(&sweeps), "--force"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_dir(&sweeps).unwrap().count(), 4);

    let heads = tmp.path().join("heads");
    let o = plmi(&["heads", "count", "--pairs", s(&pairs), "--thresholds", "idle=0.9", "--out", s(&heads)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(heads.join("head_counts.tsv").exists());
}

#[test]
fn bad_config_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "not_a_key = true\n").unwrap();
    let o = plmi(&["run", "--config", s(&cfg), "--out", s(&tmp.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = plmi(&["sweep", "--granularity", "nope", "--pairs", "x", "--out", "y"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unavailable_model_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let pairs = tmp.path().join("p.jsonl");
    assert!(plmi(&["gen", "--limit", "3", "--out", s(&pairs)]).status.success());
    let o = plmi(&["filter", "--pairs", s(&pairs), "--model", "qwen3-8b", "--out", s(&tmp.path().join("r.jsonl"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("qwen3-8b"));
}

#[test]
fn missing_pairs_file_is_reported() {
    let o = plmi(&["filter", "--pairs", "/nonexistent/p.jsonl", "--out", "/tmp/x.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/p.jsonl"));
}
