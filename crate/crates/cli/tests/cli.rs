use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_declassiflow"))
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn empty_program() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.mir");
    std::fs::write(&path, "# nothing here\n").unwrap();
    let out = bin().args(["pipeline"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out), serde_json::json!({ "functions": [] }));
}

#[test]
fn protect_reports_barriers() {
    let out = bin().arg("protect").arg(fixture("aes_like.mir")).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["barriers"], serde_json::json!({ "encrypt": ["B1"] }));
    assert!(v["protected"].as_str().unwrap().contains("specbarr"));
}

#[test]
fn analyze_emits_knowledge_and_frontiers() {
    let out = bin()
        .arg("analyze")
        .arg(fixture("nondet_join.mir"))
        .args(["--emit-knowledge", "--emit-frontiers"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let f = &json(&out)["functions"][0];
    assert_eq!(f["frontiers"]["a3"], serde_json::json!(["B3"]));
    assert_eq!(f["frontiers"]["a1"], serde_json::json!([]));
    assert_eq!(f["knowledge"]["edges"][1]["known"], serde_json::json!(["a1"]));
    assert!(f.get("refinement").is_none());
}

#[test]
fn config_and_out_file() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let out = bin()
        .arg("refine")
        .arg(fixture("stream_like.mir"))
        .arg("--config")
        .arg(fixture("stream_like.toml"))
        .arg("--out")
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(v["functions"][0]["refinement"]["queries"].as_array().is_some());
}

#[test]
fn verify_passes_with_options() {
    let out = bin()
        .arg("verify")
        .arg(fixture("sort_like.mir"))
        .args(["--window", "8", "--depth", "1", "--domain", "0..3"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["verification"][0]["pass"], true);
}

#[test]
fn failing_verification_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("leak.mir");
    std::fs::write(&path, "fn f(x) {\nA: c = input\nbr c, B, C\nB: t = load x\njmp C\nC: ret\n}\n").unwrap();
    let out = bin().arg("verify").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let out = bin().arg("verify").arg(&path).arg("--unprotected").output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let v = json(&out);
    assert_eq!(v["verification"][0]["pass"], false);
    assert_eq!(v["verification"][0]["witness"]["observation"]["kind"], "load");
}

#[test]
fn text_format() {
    let out = bin().arg("protect").arg(fixture("sort_like.mir")).args(["--format", "text"]).output().unwrap();
    let s = String::from_utf8(out.stdout).unwrap();
    assert!(s.contains("barriers (callee): {B2}"), "{s}");
}

#[test]
fn dumps() {
    let out = bin().arg("analyze").arg(fixture("loop_copy.mir")).arg("--dump-cfg").output().unwrap();
    let s = String::from_utf8(out.stdout).unwrap();
    assert!(s.starts_with("digraph \"f\""));
    let out = bin().arg("analyze").arg(fixture("loop_copy.mir")).arg("--dump-expanded").output().unwrap();
    let s = String::from_utf8(out.stdout).unwrap();
    assert!(s.contains("fn f()"));
}

#[test]
fn usage_and_analysis_errors() {
    assert_eq!(bin().output().unwrap().status.code(), Some(1));
    assert_eq!(bin().args(["analyze", "/no/such/file.mir"]).output().unwrap().status.code(), Some(1));
    let out = bin().arg("analyze").arg(fixture("aes_like.mir")).args(["--domain", "3..0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.mir");
    std::fs::write(&bad, "fn f() {\nA: x = add y, 1\nret\n}\n").unwrap();
    let out = bin().arg("analyze").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[refine]\nbogus = 1\n").unwrap();
    let out = bin().arg("refine").arg(fixture("sort_like.mir")).arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn reports_repeat_byte_for_byte() {
    let run = || bin().arg("pipeline").arg(fixture("stream_like.mir")).arg("--emit-knowledge").output().unwrap().stdout;
    assert_eq!(run(), run());
}
