use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{project_to_original, propagate, KnowledgeError, KnowledgeMap};
use crate::cfg::{Cfg, ExpandedFunction};
use crate::frontier::{block_knowledge, full_declassification, BlockKnowledge, Frontier};
use crate::ir::{Function, Inst, Operand, Terminator};

/// What callers need to know about a function.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FunctionSummary {
    pub name: String,
    /// Parameter positions known in some block.
    pub leaked_args: BTreeSet<usize>,
    /// Non-parameter variables the function itself leaks.
    pub internal_leaks: BTreeSet<String>,
    pub fully_declassified_vars: BTreeSet<String>,
    /// Parameter positions whose frontier is the entry block.
    pub declassified_params: BTreeSet<usize>,
    pub is_fully_declassified: bool,
    pub is_pseudo_transmitter: bool,
}

impl FunctionSummary {
    /// No argument and no internal value is ever leaked.
    pub fn leaks_nothing(&self) -> bool {
        self.leaked_args.is_empty() && self.internal_leaks.is_empty()
    }
}

/// Blocks where a non-parameter value is leaked directly: transmitted,
/// branched on, or passed at a leaked position of a callee.
pub(crate) fn leak_sites(
    f: &Function,
    summaries: &BTreeMap<String, FunctionSummary>,
) -> Result<Vec<(String, usize)>, KnowledgeError> {
    let is_param = |v: &str| f.params.iter().any(|p| p == v);
    let mut out = Vec::new();
    for (b, block) in f.blocks.iter().enumerate() {
        let mut push = |v: &str| {
            if !is_param(v) {
                out.push((v.to_string(), b));
            }
        };
        for inst in &block.insts {
            if let Some((Operand::Var(v), _)) = inst.transmitted() {
                push(v);
            }
            if let Inst::Call { callee, args, .. } = inst {
                let s = summaries.get(callee).ok_or_else(|| KnowledgeError::MissingSummary {
                    function: f.name.clone(),
                    callee: callee.clone(),
                })?;
                for &j in &s.leaked_args {
                    if let Some(Operand::Var(a)) = args.get(j) {
                        push(a);
                    }
                }
            }
        }
        if let Terminator::Br { cond: Operand::Var(c), .. } = &block.term {
            push(c);
        }
    }
    Ok(out)
}

/// Block knowledge of `ef.base` when only `seeds` are known on entry
/// (plus constants), with no transmitter seeding.
pub fn reseeded_knowledge(ef: &ExpandedFunction, seeds: &[&str]) -> BlockKnowledge {
    let ecfg = Cfg::build(&ef.function);
    let mut km = KnowledgeMap::new(ecfg.edges.len());
    for s in seeds {
        if !km.is_empty() {
            km.insert(ecfg.entry_edge(), *s);
        }
    }
    let consts: Vec<&str> = ef
        .function
        .blocks
        .iter()
        .flat_map(|b| &b.insts)
        .filter_map(|i| match i {
            Inst::Const { dst, .. } => Some(dst.as_str()),
            _ => None,
        })
        .collect();
    for e in 0..km.len() {
        for c in &consts {
            km.insert(e, *c);
        }
    }
    let km = propagate(km, &ef.function);
    let projected = project_to_original(&km, ef);
    block_knowledge(&projected, &Cfg::build(&ef.base))
}

/// Summarizes `ef.base` from its final block knowledge and frontiers.
pub fn summarize(
    ef: &ExpandedFunction,
    kb: &BlockKnowledge,
    frontiers: &Frontier,
    summaries: &BTreeMap<String, FunctionSummary>,
) -> Result<FunctionSummary, KnowledgeError> {
    let f = &ef.base;
    let leaked_args: BTreeSet<usize> =
        f.params.iter().enumerate().filter(|(_, p)| kb.sets().iter().any(|s| s.contains(*p))).map(|(j, _)| j).collect();
    let sites = leak_sites(f, summaries)?;
    let internal_leaks: BTreeSet<String> = sites.iter().map(|(v, _)| v.clone()).collect();
    let fully_declassified_vars = full_declassification(frontiers);
    let declassified_params =
        f.params.iter().enumerate().filter(|(_, p)| fully_declassified_vars.contains(*p)).map(|(j, _)| j).collect();
    let is_fully_declassified =
        leaked_args.iter().map(|&j| &f.params[j]).chain(&internal_leaks).all(|v| fully_declassified_vars.contains(v));

    let callees_ok =
        f.callees().iter().all(|c| summaries.get(*c).is_some_and(|s| s.is_pseudo_transmitter || s.leaks_nothing()));
    let leaks_something = !leaked_args.is_empty() || !internal_leaks.is_empty();
    let is_pseudo_transmitter = is_fully_declassified && callees_ok && leaks_something && {
        let seeds: Vec<&str> = leaked_args.iter().map(|&j| f.params[j].as_str()).collect();
        let again = reseeded_knowledge(ef, &seeds);
        sites.iter().all(|(v, b)| again.knows(*b, v))
    };

    Ok(FunctionSummary {
        name: f.name.clone(),
        leaked_args,
        internal_leaks,
        fully_declassified_vars,
        declassified_params,
        is_fully_declassified,
        is_pseudo_transmitter,
    })
}
