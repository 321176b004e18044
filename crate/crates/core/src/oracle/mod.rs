//! Reference semantics: a concrete interpreter, brute-force knowledge over
//! a small domain, and a speculative explorer used to check barriers.

mod interp;
mod spec;

use std::collections::BTreeSet;
use std::ops::{ControlFlow, RangeInclusive};

use crate::cfg::Cfg;
use crate::ir::{Equation, Function, Inst, Operand, Terminator};
use crate::knowledge::KnowledgeMap;

pub use interp::{interpret, interpret_function, load_hash, ObsKind, Observation, Trace, Valuation, DEFAULT_FUEL};
pub use spec::Exploration;
pub use spec::{
    check_frontier_property, harness_program, replay, speculative_explore, FrontierMap, Label, PropertyConfig,
    SpecExecution, SpecObservation, Verdict, Witness, HARNESS,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("instruction budget exhausted")]
    FuelExhausted,
    #[error("input sequence exhausted")]
    InputExhausted,
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("`{function}` expects {expected} arguments, got {got}")]
    Arity { function: String, expected: usize, got: usize },
    #[error("use of undefined variable `{0}`")]
    Undefined(String),
    #[error("no phi entry for the incoming edge in `{function}` block `{block}`")]
    BadPhi { function: String, block: String },
    #[error("unknown label `{label}` in `{function}`")]
    BadLabel { function: String, label: String },
    #[error("more than {0} runs needed to enumerate the domain")]
    TooManyRuns(usize),
    #[error("{0}")]
    Unsupported(String),
}

/// Runs `run` once per distinct (arguments, consumed inputs) combination
/// with every value drawn from `domain`. `run` returns how many inputs it
/// consumed, or breaks to stop early. Only the first `max_inputs` inputs
/// are enumerated; later ones read the domain's low end. Returns the number
/// of runs.
pub fn for_each_valuation(
    arity: usize,
    domain: RangeInclusive<i32>,
    max_inputs: usize,
    max_runs: usize,
    mut run: impl FnMut(&Valuation) -> Result<ControlFlow<(), usize>, OracleError>,
) -> Result<usize, OracleError> {
    const PAD: usize = 256;
    let (lo, hi) = (*domain.start(), *domain.end());
    let mut cur: Vec<i32> = vec![lo; arity];
    let mut runs = 0;
    loop {
        if runs == max_runs {
            return Err(OracleError::TooManyRuns(max_runs));
        }
        let mut inputs = cur[arity..].to_vec();
        inputs.resize(inputs.len() + PAD, lo);
        let flow = run(&Valuation { args: cur[..arity].to_vec(), inputs })?;
        runs += 1;
        let ControlFlow::Continue(used) = flow else { return Ok(runs) };
        cur.resize(arity + used.min(max_inputs), lo);
        let Some(p) = cur.iter().rposition(|&v| v < hi) else {
            return Ok(runs);
        };
        cur[p] += 1;
        cur.truncate((p + 1).max(arity));
        for v in cur.iter_mut().skip(p + 1) {
            *v = lo;
        }
    }
}

/// Variables the attacker learns on one trace: transmitted operands and
/// branch conditions, consts, and whatever follows from the instructions
/// that actually ran. Variables the trace never defines count as known.
fn trace_knowledge(f: &Function, t: &Trace, universe: &BTreeSet<String>) -> BTreeSet<String> {
    let mut known: BTreeSet<String> = BTreeSet::new();
    let mut defined: BTreeSet<&str> = f.params.iter().map(String::as_str).collect();
    let mut eqs: Vec<Equation<'_>> = Vec::new();
    let mut copies: Vec<(&str, &Operand)> = Vec::new();
    for b in &f.blocks {
        for i in &b.insts {
            if let Inst::Const { dst, .. } = i {
                known.insert(dst.clone());
            }
        }
    }
    for &(visit, idx) in &t.executed {
        let b = t.blocks[visit];
        let inst = &f.blocks[b].insts[idx];
        if let Some(d) = inst.dst() {
            defined.insert(d);
        }
        if let Some((Operand::Var(v), _)) = inst.transmitted() {
            known.insert(v.clone());
        }
        match inst {
            Inst::Phi { dst, incoming } => {
                let prev = visit.checked_sub(1).map(|p| f.blocks[t.blocks[p]].label.as_str());
                if let Some((op, _)) = incoming.iter().find(|(_, l)| Some(l.as_str()) == prev) {
                    copies.push((dst, op));
                }
            }
            _ => {
                if let Some(eq) = Equation::of(inst) {
                    eqs.push(eq);
                }
            }
        }
    }
    for &(b, _) in &t.branches {
        if let Terminator::Br { cond: Operand::Var(c), .. } = &f.blocks[b].term {
            known.insert(c.clone());
        }
    }
    let is_known = |k: &BTreeSet<String>, o: &Operand| o.as_var().is_none_or(|v| k.contains(v));
    loop {
        let mut grew = false;
        for eq in &eqs {
            if !known.contains(eq.output) && eq.inputs.iter().all(|o| is_known(&known, o)) {
                known.insert(eq.output.to_string());
                grew = true;
            }
            if known.contains(eq.output) {
                for j in eq.solvable_positions() {
                    let target = eq.inputs[j].as_var().unwrap();
                    if !known.contains(target)
                        && eq.inputs.iter().enumerate().all(|(i, o)| i == j || is_known(&known, o))
                    {
                        known.insert(target.to_string());
                        grew = true;
                    }
                }
            }
        }
        for &(dst, op) in &copies {
            let a = known.contains(dst);
            let b = is_known(&known, op);
            if a && !b {
                known.insert(op.as_var().unwrap().to_string());
                grew = true;
            } else if b && !a {
                known.insert(dst.to_string());
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
    for v in universe {
        if !defined.contains(v.as_str()) {
            known.insert(v.clone());
        }
    }
    known
}

/// Exact per-edge knowledge of a call-free function, by running it on every
/// valuation over `domain`. Edges no run traverses get every variable.
pub fn exact_knowledge(
    f: &Function,
    domain: RangeInclusive<i32>,
    max_runs: usize,
) -> Result<KnowledgeMap, OracleError> {
    if let Some(c) = f.callees().first() {
        return Err(OracleError::Unsupported(format!(
            "exact knowledge does not model calls (`{}` calls `{c}`)",
            f.name
        )));
    }
    let cfg = Cfg::build(f);
    let universe: BTreeSet<String> = f.variables().into_iter().map(str::to_string).collect();
    let mut sets: Vec<Option<BTreeSet<String>>> = vec![None; cfg.edges.len()];
    for_each_valuation(f.params.len(), domain, usize::MAX, max_runs, |v| {
        let t = interpret_function(f, v, DEFAULT_FUEL)?;
        let k = trace_knowledge(f, &t, &universe);
        let edges: BTreeSet<usize> = t.edges.iter().copied().collect();
        for e in edges {
            match &mut sets[e] {
                Some(s) => s.retain(|x| k.contains(x)),
                slot @ None => *slot = Some(k.clone()),
            }
        }
        Ok(ControlFlow::Continue(t.inputs_used))
    })?;
    Ok(KnowledgeMap::from_sets(sets.into_iter().map(|s| s.unwrap_or_else(|| universe.clone())).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    #[test]
    fn enumerates_inputs_lazily() {
        // inputs consumed depend on the first input
        let src = "fn f() {\nA: a = input\nbr a, B, C\nB: b = input\njmp C\nC: ret\n}";
        let f = parse_program(src).unwrap().functions.remove(0);
        let mut seen = Vec::new();
        let runs = for_each_valuation(0, 0..=2, usize::MAX, 100, |v| {
            let t = interpret_function(&f, v, 100)?;
            seen.push(v.inputs[..t.inputs_used].to_vec());
            Ok(ControlFlow::Continue(t.inputs_used))
        })
        .unwrap();
        // a = 0 consumes one input, a = 1 or 2 consume two
        assert_eq!(runs, 1 + 2 * 3);
        assert_eq!(seen[0], [0]);
        assert_eq!(seen[1], [1, 0]);
        assert_eq!(seen.last().unwrap(), &[2, 2]);
    }

    #[test]
    fn input_bound_ends_input_driven_loops() {
        let src = "fn f() {\nA: jmp B\nB: c = input\nbr c, B, C\nC: ret\n}";
        let f = parse_program(src).unwrap().functions.remove(0);
        let runs = for_each_valuation(0, 0..=1, 2, 100, |v| {
            Ok(ControlFlow::Continue(interpret_function(&f, v, 1000)?.inputs_used))
        })
        .unwrap();
        assert_eq!(runs, 3);
    }

    #[test]
    fn one_sided_transmit() {
        let src = "fn f(x, c) {\nA: br c, B, C\nB: transmit x\njmp C\nC: ret\n}";
        let f = parse_program(src).unwrap().functions.remove(0);
        let cfg = Cfg::build(&f);
        let k = exact_knowledge(&f, 0..=1, 100).unwrap();
        assert!(k.knows(cfg.find_edge("B", "C").unwrap(), "x"));
        assert!(!k.knows(cfg.find_edge("A", "C").unwrap(), "x"));
        assert!(k.knows(0, "c"));
    }

    #[test]
    fn phi_copy_is_bidirectional() {
        let src = "fn f(x, c) {\nA: br c, B, C\nB: jmp C\nC: y = phi [x, A], [x, B]\ntransmit y\nret\n}";
        let f = parse_program(src).unwrap().functions.remove(0);
        let k = exact_knowledge(&f, 0..=1, 100).unwrap();
        assert!(k.knows(0, "x"));
    }

    #[test]
    fn calls_are_rejected() {
        let src = "fn g() {\nA: ret\n}\nfn f() {\nA: call g()\nret\n}";
        let p = parse_program(src).unwrap();
        assert!(matches!(exact_knowledge(&p.functions[1], 0..=1, 10), Err(OracleError::Unsupported(_))));
    }
}
