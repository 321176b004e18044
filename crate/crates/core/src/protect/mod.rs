//! Barrier placement along frontiers and emission of protected clones.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::frontier::Frontier;
use crate::ir::{Function, Inst, Operand, Program, TransmitKind};
use crate::knowledge::{FunctionSummary, KnowledgeError};

/// Suffix of protected clones.
pub const PROTECTED_SUFFIX: &str = ".protected";

pub fn protected_name(f: &str) -> String {
    format!("{f}{PROTECTED_SUFFIX}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// The function protects its own leaks.
    Callee,
    /// Callers enforce the frontiers of the arguments this function leaks.
    Caller,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CallRedirect {
    pub block: String,
    pub callee: String,
    pub target: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtectionPlan {
    pub function: String,
    /// Blocks (indices into the analyzed function) that get a barrier.
    pub barriers: BTreeSet<usize>,
    /// Blocks contributed by the function's own speculative transmitters.
    pub local: BTreeSet<usize>,
    /// Blocks contributed by arguments of calls to pseudo transmitters.
    pub from_calls: BTreeSet<usize>,
    pub mode: Mode,
    pub redirects: Vec<CallRedirect>,
}

/// Frontier of `v`, or `fallback` when it has none.
fn frontier_or(fr: &Frontier, v: &str, fallback: usize) -> BTreeSet<usize> {
    let f = fr.of(v);
    if f.is_empty() {
        BTreeSet::from([fallback])
    } else {
        f
    }
}

/// Plans barriers for `f`. `top_level` functions keep barriers in their
/// entry block even when they are pseudo transmitters.
pub fn plan_protection(
    f: &Function,
    frontiers: &Frontier,
    summary: &FunctionSummary,
    summaries: &BTreeMap<String, FunctionSummary>,
    top_level: bool,
) -> Result<ProtectionPlan, KnowledgeError> {
    let mut local = BTreeSet::new();
    let mut from_calls = BTreeSet::new();
    let mut redirects = Vec::new();
    for (b, block) in f.blocks.iter().enumerate() {
        for inst in &block.insts {
            if let Some((Operand::Var(v), TransmitKind::Speculative)) = inst.transmitted() {
                local.extend(frontier_or(frontiers, v, b));
            }
            if let Inst::Call { callee, args, .. } = inst {
                let s = summaries.get(callee).ok_or_else(|| KnowledgeError::MissingSummary {
                    function: f.name.clone(),
                    callee: callee.clone(),
                })?;
                if s.is_pseudo_transmitter {
                    for &j in &s.leaked_args {
                        if let Some(Operand::Var(a)) = args.get(j) {
                            from_calls.extend(frontier_or(frontiers, a, b));
                        }
                    }
                }
                redirects.push(CallRedirect {
                    block: block.label.clone(),
                    callee: callee.clone(),
                    target: protected_name(callee),
                });
            }
        }
    }
    let mut barriers: BTreeSet<usize> = local.union(&from_calls).copied().collect();
    let mode = if summary.is_pseudo_transmitter { Mode::Caller } else { Mode::Callee };
    if summary.is_pseudo_transmitter && !top_level {
        barriers.remove(&0);
    }
    Ok(ProtectionPlan { function: f.name.clone(), barriers, local, from_calls, mode, redirects })
}

/// Block labels of the plan's barriers.
pub fn barrier_labels(f: &Function, plan: &ProtectionPlan) -> Vec<String> {
    plan.barriers.iter().map(|&b| f.blocks[b].label.clone()).collect()
}

/// `p` followed by a protected clone of every function: a `specbarr` after
/// the φs of each barrier block and every call redirected to the callee's
/// clone. Functions without a plan are cloned without barriers.
pub fn emit_protected(p: &Program, plans: &BTreeMap<String, ProtectionPlan>) -> Program {
    let mut out = p.functions.clone();
    for f in &p.functions {
        let mut g = f.clone();
        g.name = protected_name(&f.name);
        if let Some(plan) = plans.get(&f.name) {
            for &b in &plan.barriers {
                let at = g.blocks[b].phi_count();
                g.blocks[b].insts.insert(at, Inst::SpecBarr);
            }
        }
        for b in &mut g.blocks {
            for inst in &mut b.insts {
                if let Inst::Call { callee, .. } = inst {
                    *callee = protected_name(callee);
                }
            }
        }
        out.push(g);
    }
    Program { functions: out, entry_function: p.entry_function.clone() }
}

/// Number of `specbarr` instructions in `f`.
pub fn count_barriers(f: &Function) -> usize {
    f.blocks.iter().flat_map(|b| &b.insts).filter(|i| matches!(i, Inst::SpecBarr)).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_program, validate_ssa};

    fn summary(name: &str, pseudo: bool, leaked: &[usize]) -> FunctionSummary {
        FunctionSummary {
            name: name.into(),
            leaked_args: leaked.iter().copied().collect(),
            is_pseudo_transmitter: pseudo,
            ..Default::default()
        }
    }

    #[test]
    fn lone_transmit_without_frontier_falls_back_to_its_block() {
        let p = parse_program("fn f(x) {\nA: jmp B\nB: t = load x\nret\n}").unwrap();
        let f = &p.functions[0];
        let plan = plan_protection(f, &Frontier::default(), &summary("f", false, &[]), &BTreeMap::new(), true).unwrap();
        assert_eq!(plan.barriers, BTreeSet::from([1]));
        assert_eq!(plan.mode, Mode::Callee);
    }

    #[test]
    fn pseudo_callee_entry_is_exempt_unless_top_level() {
        let p = parse_program("fn g(a) {\nA: t = load a\nret\n}").unwrap();
        let f = &p.functions[0];
        let mut fr = Frontier::default();
        fr.insert("a", BTreeSet::from([0]));
        let s = summary("g", true, &[0]);
        let plan = plan_protection(f, &fr, &s, &BTreeMap::new(), false).unwrap();
        assert!(plan.barriers.is_empty());
        assert_eq!(plan.mode, Mode::Caller);
        let plan = plan_protection(f, &fr, &s, &BTreeMap::new(), true).unwrap();
        assert_eq!(plan.barriers, BTreeSet::from([0]));
    }

    #[test]
    fn call_arguments_use_caller_frontiers() {
        let src = "fn g(a, b) {\nA: t = load b\nret\n}\nfn f(x, y) {\nA: c = input\nbr c, B, C\nB: call g(x, y)\njmp C\nC: ret\n}";
        let p = parse_program(src).unwrap();
        let f = &p.functions[1];
        let summaries = BTreeMap::from([("g".to_string(), summary("g", true, &[1]))]);
        let mut fr = Frontier::default();
        fr.insert("y", BTreeSet::from([1]));
        let plan = plan_protection(f, &fr, &summary("f", false, &[]), &summaries, true).unwrap();
        assert_eq!(plan.from_calls, BTreeSet::from([1]));
        assert_eq!(plan.redirects[0].target, "g.protected");
        assert!(plan_protection(f, &fr, &summary("f", false, &[]), &BTreeMap::new(), true).is_err());
    }

    #[test]
    fn clones_are_valid_and_redirected() {
        let src = "fn g(a) {\nA: t = load a\nret\n}\nfn f(x) {\nA: jmp B\nB: i = phi [0, A], [j, B]\ncall g(x)\nj = add i, 1\nc = lt j, 3\nbr c, B, C\nC: ret\n}";
        let p = parse_program(src).unwrap();
        let plan = ProtectionPlan {
            function: "f".into(),
            barriers: BTreeSet::from([1]),
            local: BTreeSet::new(),
            from_calls: BTreeSet::from([1]),
            mode: Mode::Callee,
            redirects: vec![],
        };
        let out = emit_protected(&p, &BTreeMap::from([("f".to_string(), plan)]));
        assert_eq!(out.functions.len(), 4);
        let fp = out.function("f.protected").unwrap();
        assert_eq!(fp.blocks[1].insts[1], Inst::SpecBarr);
        assert_eq!(count_barriers(fp), 1);
        assert!(matches!(&fp.blocks[1].insts[2], Inst::Call { callee, .. } if callee == "g.protected"));
        assert!(validate_ssa(&out).is_empty());
        assert_eq!(out.function("f"), p.function("f"));
    }
}
