mod common;

use common::{load, run, set};
use declassiflow_core::ir::{parse_program, validate_ssa, Program};
use declassiflow_core::oracle::Verdict;
use declassiflow_core::pipeline::{emit_report, run_pipeline, Format, PipelineError, Report, RunConfig};
use declassiflow_core::refine::EntryConstraint;
use serde_json::Value;

fn report(name: &str, tweak: impl FnOnce(&mut RunConfig)) -> Value {
    let p = load(name);
    let mut cfg = common::config(name);
    tweak(&mut cfg);
    let out = run_pipeline(&p, &cfg).unwrap();
    serde_json::from_str(&emit_report(&Report::new(&p, &out, &cfg), Format::Json)).unwrap()
}

#[test]
fn empty_program_gives_empty_report() {
    let p = Program::new(vec![]);
    let cfg = RunConfig::default();
    let out = run_pipeline(&p, &cfg).unwrap();
    let text = emit_report(&Report::new(&p, &out, &cfg), Format::Json);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v, serde_json::json!({ "functions": [] }));
}

#[test]
fn aes_like_report_names_the_barrier() {
    let v = report("aes_like", |_| {});
    assert_eq!(v["barriers"], serde_json::json!({ "encrypt": ["B1"] }));
    let names: Vec<&str> = v["functions"].as_array().unwrap().iter().map(|f| f["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["f", "g", "h", "encrypt"]);
    let enc = &v["functions"][3];
    assert_eq!(enc["protection"]["mode"], "callee");
    assert!(enc.get("refinement").is_none());
    assert_eq!(v["functions"][1]["protection"]["mode"], "caller");
    assert!(v["protected"].as_str().unwrap().contains("fn encrypt.protected"));
}

#[test]
fn knowledge_report_lists_edges() {
    let v = report("branch_join", |c| {
        c.emit_knowledge = true;
        c.refine = false;
        c.protect = false;
    });
    let edges = v["functions"][0]["knowledge"]["edges"].as_array().unwrap();
    assert_eq!(edges.len(), 5);
    assert_eq!(edges[0]["from"], "ENTRY");
    assert_eq!(edges[0]["known"], serde_json::json!([]));
    assert_eq!(edges[4]["from"], "B3");
    assert_eq!(edges[4]["to"], "EXIT");
    assert_eq!(edges[4]["known"], serde_json::json!(["b1", "b2", "b3"]));
    assert!(v.get("barriers").is_none());
}

#[test]
fn refinement_verdicts_carry_witnesses() {
    let v = report("sort_like", |_| {});
    let q = v["functions"][0]["refinement"]["queries"].as_array().unwrap();
    let esc = q.iter().find(|q| q["verdict"] == "escapable").unwrap();
    assert_eq!(esc["header"], "B1");
    let path: Vec<&str> = esc["witness"]["path"].as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect();
    assert_eq!(path.first(), Some(&"B1"));
    assert!(q.iter().any(|q| q["verdict"] == "inevitable" && q["header"] == "B2"));
}

#[test]
fn verification_results_are_reported() {
    let v = report("sort_like", |c| c.verify = true);
    assert_eq!(v["verification"][0]["function"], "sort");
    assert_eq!(v["verification"][0]["pass"], true);
}

#[test]
fn timing_is_opt_in() {
    assert!(report("aes_like", |_| {}).get("timing").is_none());
    let v = report("aes_like", |c| c.timing = true);
    assert!(v["timing"].as_object().unwrap().contains_key("encrypt/knowledge"));
}

#[test]
fn text_report_shows_barriers() {
    let p = load("stream_like");
    let cfg = common::config("stream_like");
    let out = run_pipeline(&p, &cfg).unwrap();
    let text = emit_report(&Report::new(&p, &out, &cfg), Format::Text);
    assert!(text.contains("fn chacha"));
    assert!(text.contains("barriers (callee): {ph}"), "{text}");
}

#[test]
fn callees_are_summarized_first() {
    let (_, out) = run("aes_like", |_| {});
    let order: Vec<&str> = out.functions.iter().map(|f| f.name.as_str()).collect();
    assert_eq!(order.last(), Some(&"encrypt"));
}

#[test]
fn protected_program_is_valid_and_keeps_originals() {
    for name in common::FIXTURES {
        let (p, out) = run(name, |_| {});
        let prot = out.protected.unwrap();
        assert!(validate_ssa(&prot).is_empty(), "{name}");
        assert_eq!(&prot.functions[..p.functions.len()], &p.functions[..]);
        assert_eq!(prot.functions.len(), 2 * p.functions.len());
    }
}

#[test]
fn refinement_errors_name_the_function() {
    let mut cfg = common::config("sort_like");
    cfg.constraints.insert("sort".into(), vec!["n < 0".parse::<EntryConstraint>().unwrap()]);
    match run_pipeline(&load("sort_like"), &cfg) {
        Err(e @ PipelineError::Refine { .. }) => assert!(e.to_string().contains("sort")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn skipping_refinement_keeps_loop_frontier_low() {
    let (_, out) = run("sort_like", |c| c.refine = false);
    let r = out.function("sort").unwrap();
    assert_eq!(common::frontier(r, "x"), set(&["Body"]));
}

#[test]
fn pseudo_callee_leaks_are_enforced_by_the_caller() {
    let src =
        "fn leak(a) {\nA: t = load a\nret\n}\nfn top(s) {\nA: c = input\nbr c, B, C\nB: call leak(s)\njmp C\nC: ret\n}";
    let p = parse_program(src).unwrap();
    let cfg = RunConfig { verify: true, ..RunConfig::default() };
    let out = run_pipeline(&p, &cfg).unwrap();
    assert!(out.function("leak").unwrap().summary.is_pseudo_transmitter);
    let plan = out.function("top").unwrap().plan.as_ref().unwrap();
    assert_eq!(plan.from_calls.len(), 1);
    assert!(out.verification.iter().all(|v| matches!(v.verdict, Verdict::Pass { .. })));
}
