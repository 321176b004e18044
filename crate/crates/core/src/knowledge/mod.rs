//! Edge knowledge: which variables the attacker is guaranteed to learn from
//! the non-speculative execution, approximated by a data-flow fixpoint.

mod engine;
mod project;
mod summary;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::cfg::{Cfg, EdgeId};
use crate::ir::{Function, Inst, Operand, Terminator};

pub use engine::{propagate, propagate_seeded};
pub use project::{project_to_original, vacuous_vars};
pub use summary::{reseeded_knowledge, summarize, FunctionSummary};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KnowledgeError {
    #[error("function `{function}` calls `{callee}` before it was summarized")]
    MissingSummary { function: String, callee: String },
}

/// Per-edge variable sets, indexed by [`EdgeId`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct KnowledgeMap {
    sets: Vec<BTreeSet<String>>,
}

impl KnowledgeMap {
    pub fn new(edges: usize) -> Self {
        KnowledgeMap { sets: vec![BTreeSet::new(); edges] }
    }

    pub fn from_sets(sets: Vec<BTreeSet<String>>) -> Self {
        KnowledgeMap { sets }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn get(&self, e: EdgeId) -> &BTreeSet<String> {
        &self.sets[e]
    }

    pub fn knows(&self, e: EdgeId, v: &str) -> bool {
        self.sets[e].contains(v)
    }

    pub fn insert(&mut self, e: EdgeId, v: impl Into<String>) -> bool {
        self.sets[e].insert(v.into())
    }

    pub fn sets(&self) -> &[BTreeSet<String>] {
        &self.sets
    }

    /// Is every set of `self` contained in the matching set of `other`?
    pub fn is_subset(&self, other: &KnowledgeMap) -> bool {
        self.sets.len() == other.sets.len() && self.sets.iter().zip(&other.sets).all(|(a, b)| a.is_subset(b))
    }

    /// Knowledge of the edge between two labels (`ENTRY`/`EXIT` for the virtual nodes).
    pub fn edge<'a>(&'a self, cfg: &Cfg, from: &str, to: &str) -> Option<&'a BTreeSet<String>> {
        cfg.find_edge(from, to).map(|e| &self.sets[e])
    }
}

/// Seeds the map before propagation: transmitted operands on the out-edges
/// of their block, arguments a callee fully declassifies on the out-edges of
/// the call block, and const-defined variables everywhere.
pub fn init_knowledge(
    f: &Function,
    summaries: &BTreeMap<String, FunctionSummary>,
) -> Result<KnowledgeMap, KnowledgeError> {
    let cfg = Cfg::build(f);
    let mut km = KnowledgeMap::new(cfg.edges.len());
    let mut everywhere = Vec::new();
    for (b, block) in f.blocks.iter().enumerate() {
        let mut leaked: Vec<&str> = Vec::new();
        for inst in &block.insts {
            if let Some((Operand::Var(v), _)) = inst.transmitted() {
                leaked.push(v);
            }
            match inst {
                Inst::Const { dst, .. } => everywhere.push(dst.clone()),
                Inst::Call { callee, args, .. } => {
                    let s = summaries.get(callee).ok_or_else(|| KnowledgeError::MissingSummary {
                        function: f.name.clone(),
                        callee: callee.clone(),
                    })?;
                    for &j in &s.declassified_params {
                        if let Some(Operand::Var(a)) = args.get(j) {
                            leaked.push(a);
                        }
                    }
                }
                _ => {}
            }
        }
        if let Terminator::Br { cond: Operand::Var(c), .. } = &block.term {
            leaked.push(c);
        }
        for &e in &cfg.out_edges[b] {
            for v in &leaked {
                km.insert(e, *v);
            }
        }
    }
    for e in 0..km.len() {
        for v in &everywhere {
            km.insert(e, v.clone());
        }
    }
    Ok(km)
}

/// Runs initialization and propagation on one (acyclic or not) function.
pub fn analyze_function(
    f: &Function,
    summaries: &BTreeMap<String, FunctionSummary>,
) -> Result<KnowledgeMap, KnowledgeError> {
    Ok(propagate(init_knowledge(f, summaries)?, f))
}

/// `(from, to)` labels of every edge, `ENTRY`/`EXIT` for the virtual nodes.
pub fn edge_labels(cfg: &Cfg) -> Vec<(String, String)> {
    cfg.edges.iter().map(|e| (cfg.node_label(e.from).to_string(), cfg.node_label(e.to).to_string())).collect()
}
