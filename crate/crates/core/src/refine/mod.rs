//! Refinement of block knowledge: for a region and a candidate variable,
//! decide by bounded symbolic execution whether every path through the
//! region transmits the variable. If so, the variable is known throughout
//! the region.

mod symex;

use std::collections::BTreeSet;
use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::Serialize;

use crate::cfg::{DomInfo, NameGen};
use crate::frontier::BlockKnowledge;
use crate::ir::{Function, Inst, Program, Terminator};
use crate::oracle::{interpret, Valuation, DEFAULT_FUEL};
use symex::{Executor, Limits, Outcome, SymKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RefineError {
    #[error("more than {0} symbolic values on one path")]
    TooManySymbols(usize),
    #[error("entry constraints of `{function}` leave no admissible value")]
    UnsatisfiableConstraints { function: String },
    #[error("constraint `{constraint}` does not name a parameter of `{function}`")]
    BadConstraint { function: String, constraint: String },
    #[error("cannot parse constraint `{0}`")]
    ParseConstraint(String),
    #[error("malformed function: {0}")]
    Malformed(String),
    #[error("refinement of `{0}` was not inevitable")]
    NotInevitable(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }
}

/// `param OP value`, restricting a parameter's symbolic domain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EntryConstraint {
    pub var: String,
    pub op: CmpOp,
    pub value: i32,
}

impl EntryConstraint {
    pub fn holds(&self, v: i32) -> bool {
        match self.op {
            CmpOp::Lt => v < self.value,
            CmpOp::Le => v <= self.value,
            CmpOp::Gt => v > self.value,
            CmpOp::Ge => v >= self.value,
            CmpOp::Eq => v == self.value,
            CmpOp::Ne => v != self.value,
        }
    }
}

impl fmt::Display for EntryConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.var, self.op.symbol(), self.value)
    }
}

impl FromStr for EntryConstraint {
    type Err = RefineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RefineError::ParseConstraint(s.to_string());
        // two-character operators first
        for (tok, op) in [
            ("<=", CmpOp::Le),
            (">=", CmpOp::Ge),
            ("==", CmpOp::Eq),
            ("!=", CmpOp::Ne),
            ("<", CmpOp::Lt),
            (">", CmpOp::Gt),
        ] {
            if let Some((l, r)) = s.split_once(tok) {
                let var = l.trim();
                if var.is_empty() || !var.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
                    return Err(bad());
                }
                let value = r.trim().parse().map_err(|_| bad())?;
                return Ok(EntryConstraint { var: var.to_string(), op, value });
            }
        }
        Err(bad())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefineConfig {
    /// Header visits allowed per loop and frame, beyond the first.
    pub loop_cap: usize,
    pub path_cap: usize,
    /// Domain of every symbolic value.
    pub domain: RangeInclusive<i32>,
    pub max_symbols: usize,
    /// Backtracking nodes per satisfiability query.
    pub sat_budget: usize,
    pub constraints: Vec<EntryConstraint>,
    /// Skip (region, variable) pairs already known across the region.
    pub skip_known: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            loop_cap: 16,
            path_cap: 10_000,
            domain: 0..=15,
            max_symbols: 20,
            sat_budget: 5_000_000,
            constraints: Vec::new(),
            skip_known: true,
        }
    }
}

/// A dominator subtree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Region {
    pub header: usize,
    pub blocks: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub args: Vec<i32>,
    pub inputs: Vec<i32>,
    /// Blocks of the escaping path, by label.
    pub path: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum Verdict {
    Inevitable,
    Escapable { witness: Witness },
    Unknown { reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RefinementResult {
    pub region: Region,
    pub variable: String,
    pub verdict: Verdict,
}

/// Blocks containing a load, store or transmit.
pub fn transmitter_blocks(f: &Function) -> Vec<usize> {
    f.blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| {
            b.insts.iter().any(|i| matches!(i, Inst::Load { .. } | Inst::Store { .. } | Inst::Transmit { .. }))
        })
        .map(|(i, _)| i)
        .collect()
}

/// Regions headed by each block that dominates every transmitter block,
/// outermost first.
pub fn candidate_regions(f: &Function, dom: &DomInfo) -> Vec<Region> {
    let tb = transmitter_blocks(f);
    if tb.is_empty() {
        return Vec::new();
    }
    let mut heads: Vec<usize> = (0..f.blocks.len()).filter(|&b| tb.iter().all(|&t| dom.dom(b, t))).collect();
    heads.sort_by_key(|&b| dom.depth(b));
    heads
        .into_iter()
        .map(|header| {
            let mut blocks = dom.subtree(header);
            blocks.sort_unstable();
            Region { header, blocks }
        })
        .collect()
}

/// Variables known in some transmitter block.
pub fn candidate_vars(f: &Function, kb: &BlockKnowledge) -> BTreeSet<String> {
    if kb.is_empty() {
        return BTreeSet::new();
    }
    transmitter_blocks(f).into_iter().flat_map(|b| kb.get(b).iter().cloned()).collect()
}

/// Adds the flag instrumentation for one query. All `ret` blocks are
/// redirected to a fresh exit block holding the assertion; return values
/// are dropped, since only the flag matters.
pub fn instrument_flags(f: &Function, r: &Region, x: &str, kb: &BlockKnowledge) -> Function {
    let tb = transmitter_blocks(f);
    let mut g = f.clone();
    let exit = NameGen::new(f).fresh("exit");
    let at = g.blocks[r.header].phi_count();
    g.blocks[r.header].insts.insert(at, Inst::FlagSet(-1));
    for &b in &r.blocks {
        if tb.contains(&b) && kb.knows(b, x) {
            g.blocks[b].insts.push(Inst::FlagSet(1));
        }
    }
    g.blocks[0].insts.insert(0, Inst::FlagSet(0));
    for b in &mut g.blocks {
        if matches!(b.term, Terminator::Ret(_)) {
            b.term = Terminator::Jmp(exit.clone());
        }
    }
    g.blocks.push(crate::ir::Block::new(exit, vec![Inst::FlagAssertNe(-1)], Terminator::Ret(None)));
    g
}

/// Is there a satisfiable path that leaves through the exit with the flag
/// still at −1? `p` supplies callees. `header` is the region header of the
/// instrumentation; paths that set the flag and cannot return to it are
/// not explored further.
pub fn check_inevitable(
    p: &Program,
    f_instrumented: &Function,
    header: usize,
    cfg: &RefineConfig,
) -> Result<Verdict, RefineError> {
    let mut pp = p.clone();
    let idx = match pp.function_index(&f_instrumented.name) {
        Some(i) => {
            pp.functions[i] = f_instrumented.clone();
            i
        }
        None => {
            pp.functions.push(f_instrumented.clone());
            pp.functions.len() - 1
        }
    };
    let limits = Limits {
        loop_cap: cfg.loop_cap,
        path_cap: cfg.path_cap,
        domain: cfg.domain.clone(),
        max_symbols: cfg.max_symbols,
        sat_budget: cfg.sat_budget,
    };
    let mut ex = Executor::new(&pp, idx, header, &limits, &cfg.constraints)?;
    Ok(match ex.run(idx)? {
        Outcome::Holds => Verdict::Inevitable,
        Outcome::Unknown(reason) => Verdict::Unknown { reason },
        Outcome::Violated { syms, model, path } => {
            let mut args = vec![0; f_instrumented.params.len()];
            let mut inputs = Vec::new();
            for (k, v) in syms.iter().zip(&model) {
                match k {
                    SymKind::Param(j) => args[*j] = *v,
                    SymKind::Input(_) => inputs.push(*v),
                }
            }
            let witness = Witness { args, inputs, path };
            if replays(&pp, &f_instrumented.name, &witness) {
                Verdict::Escapable { witness }
            } else {
                Verdict::Unknown { reason: "witness did not replay".to_string() }
            }
        }
    })
}

/// Does the concrete run on the witness violate the flag assertion?
pub fn replays(p: &Program, name: &str, w: &Witness) -> bool {
    let v = Valuation { args: w.args.clone(), inputs: w.inputs.clone() };
    interpret(p, name, &v, DEFAULT_FUEL).is_ok_and(|t| t.flag_violated)
}

/// Adds the variable to every block of the region.
pub fn apply_refinement(kb: &BlockKnowledge, r: &RefinementResult) -> Result<BlockKnowledge, RefineError> {
    if r.verdict != Verdict::Inevitable {
        return Err(RefineError::NotInevitable(r.variable.clone()));
    }
    let mut out = kb.clone();
    for &b in &r.region.blocks {
        out.insert(b, r.variable.clone());
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Refinement {
    pub regions: Vec<Region>,
    pub candidates: BTreeSet<String>,
    pub results: Vec<RefinementResult>,
    /// Pairs skipped because the variable was already known in the region.
    pub skipped: usize,
    pub kb: BlockKnowledge,
}

/// Runs every (region, variable) query of `f`, outermost region first; a
/// variable found inevitable in a region is not queried in inner ones.
pub fn refine_function(
    p: &Program,
    f: &Function,
    dom: &DomInfo,
    kb: &BlockKnowledge,
    cfg: &RefineConfig,
) -> Result<Refinement, RefineError> {
    let regions = candidate_regions(f, dom);
    let candidates = candidate_vars(f, kb);
    let tb = transmitter_blocks(f);
    let mut out =
        Refinement { regions: regions.clone(), candidates: candidates.clone(), kb: kb.clone(), ..Default::default() };
    for x in &candidates {
        for r in &regions {
            let known_all = r.blocks.iter().all(|&b| out.kb.knows(b, x));
            let flagged = r.blocks.iter().any(|&b| tb.contains(&b) && kb.knows(b, x));
            if (cfg.skip_known && known_all) || !flagged {
                out.skipped += 1;
                continue;
            }
            let g = instrument_flags(f, r, x, kb);
            let verdict = check_inevitable(p, &g, r.header, cfg)?;
            let res = RefinementResult { region: r.clone(), variable: x.clone(), verdict };
            let done = res.verdict == Verdict::Inevitable;
            if done {
                out.kb = apply_refinement(&out.kb, &res)?;
            }
            out.results.push(res);
            if done {
                break;
            }
        }
    }
    Ok(out)
}
