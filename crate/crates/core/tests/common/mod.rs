#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use declassiflow_core::cfg::Cfg;
use declassiflow_core::ir::{parse_program, Program};
use declassiflow_core::pipeline::{apply_config, run_pipeline, FunctionResult, PipelineOutput, RunConfig};

pub const FIXTURES: [&str; 9] = [
    "branch_join",
    "nondet_join",
    "two_guards",
    "loop_leak",
    "loop_unknown",
    "loop_copy",
    "aes_like",
    "sort_like",
    "stream_like",
];

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn load(name: &str) -> Program {
    let path = fixture_dir().join(format!("{name}.mir"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    parse_program(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Defaults plus the fixture's TOML, if it has one.
pub fn config(name: &str) -> RunConfig {
    let mut cfg = RunConfig::default();
    let path = fixture_dir().join(format!("{name}.toml"));
    if let Ok(text) = std::fs::read_to_string(path) {
        apply_config(&mut cfg, &text).unwrap();
    }
    cfg
}

pub fn run(name: &str, tweak: impl FnOnce(&mut RunConfig)) -> (Program, PipelineOutput) {
    let p = load(name);
    let mut cfg = config(name);
    tweak(&mut cfg);
    let out = run_pipeline(&p, &cfg).unwrap_or_else(|e| panic!("{name}: {e}"));
    (p, out)
}

pub fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Knowledge on the edge `from -> to` of the analyzed function.
pub fn edge(r: &FunctionResult, from: &str, to: &str) -> BTreeSet<String> {
    let cfg = Cfg::build(r.base());
    r.knowledge.edge(&cfg, from, to).unwrap_or_else(|| panic!("no edge {from} -> {to}")).clone()
}

pub fn frontier(r: &FunctionResult, v: &str) -> BTreeSet<String> {
    let cfg = Cfg::build(r.base());
    r.frontiers.of(v).into_iter().map(|b| cfg.labels[b].clone()).collect()
}
