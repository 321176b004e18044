use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{DefSite, Function, Inst, Operand, Program};
use crate::cfg::{Cfg, DomInfo};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ViolationKind {
    DuplicateFunction,
    UnknownCallee,
    ArityMismatch,
    Recursion,
    DuplicateLabel,
    UnknownLabel,
    DuplicateSuccessor,
    EntryHasPredecessors,
    DuplicateDefinition,
    PhiNotPrefix,
    PhiArity,
    UndefinedVariable,
    NotDominated,
    PhiInputNotPrior,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub function: String,
    pub block: Option<String>,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.block {
            Some(b) => write!(f, "{}:{}: {}", self.function, b, self.message),
            None => write!(f, "{}: {}", self.function, self.message),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

struct Sink<'a> {
    function: &'a str,
    out: &'a mut Vec<Violation>,
}

impl Sink<'_> {
    fn push(&mut self, block: Option<&str>, kind: ViolationKind, message: String) {
        self.out.push(Violation {
            function: self.function.to_string(),
            block: block.map(str::to_string),
            kind,
            message,
        });
    }
}

/// Checks the structural and SSA invariants of every function.
pub fn validate_ssa(p: &Program) -> ValidationReport {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for f in &p.functions {
        if !seen.insert(f.name.as_str()) {
            Sink { function: &f.name, out: &mut out }.push(
                None,
                ViolationKind::DuplicateFunction,
                format!("duplicate function `{}`", f.name),
            );
        }
    }
    let arity: BTreeMap<&str, usize> = p.functions.iter().map(|f| (f.name.as_str(), f.params.len())).collect();
    for f in &p.functions {
        let mut sink = Sink { function: &f.name, out: &mut out };
        for b in &f.blocks {
            for inst in &b.insts {
                if let Inst::Call { callee, args, .. } = inst {
                    match arity.get(callee.as_str()) {
                        None => sink.push(
                            Some(&b.label),
                            ViolationKind::UnknownCallee,
                            format!("unknown callee `{callee}`"),
                        ),
                        Some(&n) if n != args.len() => sink.push(
                            Some(&b.label),
                            ViolationKind::ArityMismatch,
                            format!("`{callee}` expects {n} arguments, got {}", args.len()),
                        ),
                        _ => {}
                    }
                }
            }
        }
        validate_function(f, &mut sink);
    }
    check_recursion(p, &mut out);
    ValidationReport { violations: out }
}

fn check_recursion(p: &Program, out: &mut Vec<Violation>) {
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; p.functions.len()];
    fn visit(p: &Program, i: usize, state: &mut [u8], out: &mut Vec<Violation>) {
        state[i] = 1;
        for c in p.functions[i].callees() {
            let Some(j) = p.function_index(c) else { continue };
            match state[j] {
                0 => visit(p, j, state, out),
                1 => out.push(Violation {
                    function: p.functions[i].name.clone(),
                    block: None,
                    kind: ViolationKind::Recursion,
                    message: format!("recursive call to `{c}`"),
                }),
                _ => {}
            }
        }
        state[i] = 2;
    }
    for i in 0..p.functions.len() {
        if state[i] == 0 {
            visit(p, i, &mut state, out);
        }
    }
}

fn validate_function(f: &Function, sink: &mut Sink<'_>) {
    use ViolationKind::*;

    let mut labels = BTreeSet::new();
    for b in &f.blocks {
        if !labels.insert(b.label.as_str()) {
            sink.push(Some(&b.label), DuplicateLabel, format!("duplicate label `{}`", b.label));
        }
    }
    let mut labels_ok = true;
    for b in &f.blocks {
        let succs = b.term.successors();
        for s in &succs {
            if !labels.contains(s) {
                sink.push(Some(&b.label), UnknownLabel, format!("unknown label `{s}`"));
                labels_ok = false;
            }
        }
        if succs.len() == 2 && succs[0] == succs[1] {
            sink.push(Some(&b.label), DuplicateSuccessor, format!("both branch targets are `{}`", succs[0]));
        }
        for inst in &b.insts {
            if let Inst::Phi { incoming, .. } = inst {
                for (_, l) in incoming {
                    if !labels.contains(l.as_str()) {
                        sink.push(Some(&b.label), UnknownLabel, format!("unknown label `{l}` in phi"));
                        labels_ok = false;
                    }
                }
            }
        }
    }

    let mut defs: BTreeMap<&str, DefSite> = BTreeMap::new();
    for (i, p) in f.params.iter().enumerate() {
        if defs.insert(p, DefSite::Param(i)).is_some() {
            sink.push(None, DuplicateDefinition, format!("duplicate definition of `{p}`"));
        }
    }
    for (bi, b) in f.blocks.iter().enumerate() {
        for (index, inst) in b.insts.iter().enumerate() {
            if let Some(d) = inst.dst() {
                if defs.contains_key(d) {
                    sink.push(Some(&b.label), DuplicateDefinition, format!("duplicate definition of `{d}`"));
                } else {
                    defs.insert(d, DefSite::Inst { block: bi, index });
                }
            }
        }
    }

    for b in &f.blocks {
        let n = b.phi_count();
        if b.insts[n..].iter().any(Inst::is_phi) {
            sink.push(Some(&b.label), PhiNotPrefix, "phi after a non-phi instruction".to_string());
        }
    }

    if !labels_ok || labels.len() != f.blocks.len() {
        return;
    }
    let cfg = Cfg::build(f);
    let dom = DomInfo::compute(&cfg);

    if !cfg.preds[0].is_empty() {
        sink.push(Some(&f.blocks[0].label), EntryHasPredecessors, "entry block has predecessors".to_string());
    }

    for (bi, b) in f.blocks.iter().enumerate() {
        let preds: BTreeSet<&str> = cfg.preds[bi].iter().map(|&p| f.blocks[p].label.as_str()).collect();
        for (index, inst) in b.insts.iter().enumerate() {
            if let Inst::Phi { dst, incoming } = inst {
                let named: Vec<&str> = incoming.iter().map(|(_, l)| l.as_str()).collect();
                let named_set: BTreeSet<&str> = named.iter().copied().collect();
                if named.len() != cfg.preds[bi].len() || named_set != preds {
                    sink.push(
                        Some(&b.label),
                        PhiArity,
                        format!("phi `{dst}` has {} entries for {} predecessors", named.len(), preds.len()),
                    );
                }
                for (v, l) in incoming {
                    let Operand::Var(v) = v else { continue };
                    let Some(&site) = defs.get(v.as_str()) else {
                        sink.push(Some(&b.label), UndefinedVariable, format!("undefined variable `{v}`"));
                        continue;
                    };
                    let Some(pi) = f.block_index(l) else { continue };
                    if !cfg.reachable[pi] {
                        continue;
                    }
                    let ok = match site {
                        DefSite::Param(_) => true,
                        DefSite::Inst { block, .. } => dom.dom(block, pi),
                    };
                    if !ok {
                        sink.push(
                            Some(&b.label),
                            PhiInputNotPrior,
                            format!("phi input `{v}` from `{l}` not defined prior to block"),
                        );
                    }
                }
                continue;
            }
            for u in inst.uses() {
                check_use(u, bi, index, &defs, &dom, &cfg, b.label.as_str(), sink);
            }
        }
        for u in b.term.uses() {
            check_use(u, bi, b.insts.len(), &defs, &dom, &cfg, b.label.as_str(), sink);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn check_use(
    u: &Operand,
    bi: usize,
    index: usize,
    defs: &BTreeMap<&str, DefSite>,
    dom: &DomInfo,
    cfg: &Cfg,
    label: &str,
    sink: &mut Sink<'_>,
) {
    let Operand::Var(v) = u else { return };
    let Some(&site) = defs.get(v.as_str()) else {
        sink.push(Some(label), ViolationKind::UndefinedVariable, format!("undefined variable `{v}`"));
        return;
    };
    if !cfg.reachable[bi] {
        return;
    }
    let ok = match site {
        DefSite::Param(_) => true,
        DefSite::Inst { block, index: di } if block == bi => di < index,
        DefSite::Inst { block, .. } => dom.strictly_dom(block, bi),
    };
    if !ok {
        sink.push(Some(label), ViolationKind::NotDominated, format!("use of `{v}` not dominated by its definition"));
    }
}
