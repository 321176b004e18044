//! A small bounded symbolic executor over the IR. Values are expression
//! trees over symbols (parameters and dynamic `input`s); loads are opaque
//! terms evaluated with the interpreter's address hash, so every path
//! condition can be checked by enumeration over the symbol domain.

use std::collections::{BTreeMap, HashMap};
use std::ops::RangeInclusive;
use std::rc::Rc;

use super::{EntryConstraint, RefineError};
use crate::ir::{gep_eval, BinOp, Inst, Operand, Program, Terminator, UnOp};
use crate::oracle::load_hash;

#[derive(Debug, PartialEq, Eq, Hash)]
pub(crate) enum Expr {
    Lit(i32),
    Sym(usize),
    Un(UnOp, Rc<Expr>),
    Bin(BinOp, Rc<Expr>, Rc<Expr>),
    Gep(Rc<Expr>, Rc<Expr>, i32),
    Load(Rc<Expr>),
}

impl Expr {
    fn lit(&self) -> Option<i32> {
        match self {
            Expr::Lit(n) => Some(*n),
            _ => None,
        }
    }

    fn eval(&self, model: &[i32]) -> i32 {
        match self {
            Expr::Lit(n) => *n,
            Expr::Sym(s) => model[*s],
            Expr::Un(op, a) => op.eval(a.eval(model)),
            Expr::Bin(op, a, b) => op.eval(a.eval(model), b.eval(model)),
            Expr::Gep(a, b, s) => gep_eval(a.eval(model), b.eval(model), *s),
            Expr::Load(a) => load_hash(a.eval(model)),
        }
    }

    fn max_sym(&self) -> Option<usize> {
        match self {
            Expr::Lit(_) => None,
            Expr::Sym(s) => Some(*s),
            Expr::Un(_, a) | Expr::Load(a) => a.max_sym(),
            Expr::Bin(_, a, b) | Expr::Gep(a, b, _) => a.max_sym().max(b.max_sym()),
        }
    }

    fn syms(&self, out: &mut Vec<usize>) {
        match self {
            Expr::Lit(_) => {}
            Expr::Sym(s) => out.push(*s),
            Expr::Un(_, a) | Expr::Load(a) => a.syms(out),
            Expr::Bin(_, a, b) | Expr::Gep(a, b, _) => {
                a.syms(out);
                b.syms(out);
            }
        }
    }
}

fn un(op: UnOp, a: Rc<Expr>) -> Rc<Expr> {
    match a.lit() {
        Some(x) => Rc::new(Expr::Lit(op.eval(x))),
        None => Rc::new(Expr::Un(op, a)),
    }
}

fn bin(op: BinOp, a: Rc<Expr>, b: Rc<Expr>) -> Rc<Expr> {
    match (a.lit(), b.lit()) {
        (Some(x), Some(y)) => Rc::new(Expr::Lit(op.eval(x, y))),
        _ => Rc::new(Expr::Bin(op, a, b)),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum SymKind {
    Param(usize),
    Input(usize),
}

/// `expr != 0` must equal `truth`.
#[derive(Clone, Debug)]
struct Constraint {
    expr: Rc<Expr>,
    truth: bool,
}

impl Constraint {
    fn holds(&self, model: &[i32]) -> bool {
        (self.expr.eval(model) != 0) == self.truth
    }
}

pub(crate) struct Limits {
    pub loop_cap: usize,
    pub path_cap: usize,
    pub domain: RangeInclusive<i32>,
    pub max_symbols: usize,
    pub sat_budget: usize,
}

#[derive(Clone)]
struct Frame {
    func: usize,
    block: usize,
    pc: usize,
    env: HashMap<String, Rc<Expr>>,
    visits: HashMap<usize, usize>,
    ret_dst: Option<String>,
}

#[derive(Clone)]
struct State {
    frames: Vec<Frame>,
    flag: i32,
    constraints: Vec<Constraint>,
    syms: Vec<SymKind>,
    inputs: usize,
    path: Vec<String>,
    /// Branch target still to be entered (deferred fork side).
    pending: Option<String>,
}

pub(crate) enum Outcome {
    /// No satisfiable state reaches the assertion with the flag at −1.
    Holds,
    /// A concrete model: symbol kinds and values, plus the top-level path.
    Violated {
        syms: Vec<SymKind>,
        model: Vec<i32>,
        path: Vec<String>,
    },
    Unknown(String),
}

/// Model search by backtracking over the symbol domains, one independent
/// group of symbols at a time.
struct Solver {
    limit: usize,
    budget: usize,
}

fn group_of(cs: &[Constraint], nsyms: usize) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..nsyms).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    for c in cs {
        let mut s = Vec::new();
        c.expr.syms(&mut s);
        for w in s.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            parent[a] = b;
        }
    }
    (0..nsyms).map(|s| find(&mut parent, s)).collect()
}

impl Solver {
    /// Assigns the symbols of `group` in `model` so that every constraint
    /// whose symbols all lie in the group holds. `Err` on budget exhaustion.
    fn solve_group(
        &mut self,
        cs: &[Constraint],
        group: &[usize],
        domains: &[&[i32]],
        model: &mut [i32],
    ) -> Result<bool, ()> {
        let mut by_last: BTreeMap<usize, Vec<&Constraint>> = BTreeMap::new();
        for c in cs {
            if let Some(m) = c.expr.max_sym() {
                if group.contains(&m) {
                    by_last.entry(m).or_default().push(c);
                }
            }
        }
        self.search(group, 0, &by_last, domains, model)
    }

    fn search(
        &mut self,
        group: &[usize],
        i: usize,
        cs: &BTreeMap<usize, Vec<&Constraint>>,
        domains: &[&[i32]],
        model: &mut [i32],
    ) -> Result<bool, ()> {
        let Some(&s) = group.get(i) else { return Ok(true) };
        for &v in domains[s] {
            if self.budget == 0 {
                return Err(());
            }
            self.budget -= 1;
            model[s] = v;
            if cs.get(&s).is_none_or(|v| v.iter().all(|c| c.holds(model)))
                && self.search(group, i + 1, cs, domains, model)?
            {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// A model of all constraints, solving each independent group on its
    /// own. With `focus`, only the group containing it is searched (the
    /// others are known to be satisfiable) and the model is partial.
    fn solve(&mut self, cs: &[Constraint], domains: &[&[i32]], focus: Option<usize>) -> Result<Option<Vec<i32>>, ()> {
        self.budget = self.limit;
        if cs.iter().any(|c| c.expr.max_sym().is_none() && !c.holds(&[])) {
            return Ok(None);
        }
        let n = domains.len();
        let roots = group_of(cs, n);
        let mut model: Vec<i32> = domains.iter().map(|d| d[0]).collect();
        let mut seen = vec![false; n];
        for s in 0..n {
            let r = roots[s];
            if seen[r] || focus.is_some_and(|f| roots[f] != r) {
                continue;
            }
            seen[r] = true;
            let group: Vec<usize> = (0..n).filter(|&x| roots[x] == r).collect();
            if !self.solve_group(cs, &group, domains, &mut model)? {
                return Ok(None);
            }
        }
        Ok(Some(model))
    }
}

pub(crate) struct Executor<'a> {
    p: &'a Program,
    limits: &'a Limits,
    default_domain: Vec<i32>,
    param_domains: Vec<Vec<i32>>,
    /// Blocks of the top function from which the region header is reachable.
    reaches_header: Vec<bool>,
    solver: Solver,
}

impl<'a> Executor<'a> {
    pub(crate) fn new(
        p: &'a Program,
        func: usize,
        header: usize,
        limits: &'a Limits,
        constraints: &[EntryConstraint],
    ) -> Result<Self, RefineError> {
        let f = &p.functions[func];
        let default_domain: Vec<i32> = limits.domain.clone().collect();
        let mut param_domains = vec![default_domain.clone(); f.params.len()];
        for c in constraints {
            let j = f
                .params
                .iter()
                .position(|x| *x == c.var)
                .ok_or_else(|| RefineError::BadConstraint { function: f.name.clone(), constraint: c.to_string() })?;
            param_domains[j].retain(|&v| c.holds(v));
        }
        if default_domain.is_empty() || param_domains.iter().any(Vec::is_empty) {
            return Err(RefineError::UnsatisfiableConstraints { function: f.name.clone() });
        }
        let cfg = crate::cfg::Cfg::build(f);
        let mut reaches_header = vec![false; f.blocks.len()];
        let mut stack = vec![header];
        reaches_header[header] = true;
        while let Some(b) = stack.pop() {
            for &q in &cfg.preds[b] {
                if !reaches_header[q] {
                    reaches_header[q] = true;
                    stack.push(q);
                }
            }
        }
        Ok(Executor {
            p,
            limits,
            default_domain,
            param_domains,
            reaches_header,
            solver: Solver { limit: limits.sat_budget, budget: limits.sat_budget },
        })
    }

    fn new_sym(&self, st: &mut State, kind: SymKind) -> Result<Rc<Expr>, RefineError> {
        if st.syms.len() == self.limits.max_symbols {
            return Err(RefineError::TooManySymbols(self.limits.max_symbols));
        }
        st.syms.push(kind);
        Ok(Rc::new(Expr::Sym(st.syms.len() - 1)))
    }

    fn domains<'s>(default: &'s [i32], params: &'s [Vec<i32>], st: &State) -> Vec<&'s [i32]> {
        st.syms
            .iter()
            .map(|k| match k {
                SymKind::Param(j) => params[*j].as_slice(),
                SymKind::Input(_) => default,
            })
            .collect()
    }

    /// Is the state's path condition still satisfiable after adding a
    /// constraint on `e`?
    fn feasible(&mut self, st: &State, e: &Expr) -> Result<bool, String> {
        let mut f = Vec::new();
        e.syms(&mut f);
        let domains = Self::domains(&self.default_domain, &self.param_domains, st);
        let r = self.solver.solve(&st.constraints, &domains, f.first().copied());
        r.map(|m| m.is_some()).map_err(|_| "constraint budget exhausted".to_string())
    }

    /// Explores every path of function `func` from its entry.
    pub(crate) fn run(&mut self, func: usize) -> Result<Outcome, RefineError> {
        let f = &self.p.functions[func];
        let mut st = State {
            frames: Vec::new(),
            flag: 0,
            constraints: Vec::new(),
            syms: Vec::new(),
            inputs: 0,
            path: vec![f.blocks[0].label.clone()],
            pending: None,
        };
        let mut env = HashMap::new();
        for (j, p) in f.params.iter().enumerate() {
            let s = self.new_sym(&mut st, SymKind::Param(j))?;
            env.insert(p.clone(), s);
        }
        st.frames.push(Frame { func, block: 0, pc: 0, env, visits: HashMap::from([(0, 1)]), ret_dst: None });
        if !self.reaches_header[0] {
            return Ok(Outcome::Holds);
        }
        let mut stack = vec![st];
        let mut paths = 0usize;
        let mut unknown: Option<String> = None;
        while let Some(mut st) = stack.pop() {
            let mut flow = match st.pending.take() {
                Some(t) => self.goto(&mut st, &t)?,
                None => Flow::Continue,
            };
            while let Flow::Continue = flow {
                flow = self.step(&mut st, &mut stack)?;
            }
            match flow {
                Flow::Continue => unreachable!(),
                Flow::Done => paths += 1,
                Flow::Cap(why) => {
                    unknown.get_or_insert(why);
                    paths += 1;
                }
                Flow::Violated => {
                    let domains = Self::domains(&self.default_domain, &self.param_domains, &st);
                    match self.solver.solve(&st.constraints, &domains, None) {
                        Ok(Some(model)) => {
                            return Ok(Outcome::Violated { syms: st.syms.clone(), model, path: st.path });
                        }
                        Ok(None) => paths += 1,
                        Err(()) => {
                            unknown.get_or_insert("constraint budget exhausted".to_string());
                            paths += 1;
                        }
                    }
                }
            }
            if paths > self.limits.path_cap {
                return Ok(Outcome::Unknown(format!("more than {} paths", self.limits.path_cap)));
            }
        }
        Ok(match unknown {
            Some(why) => Outcome::Unknown(why),
            None => Outcome::Holds,
        })
    }

    fn operand(st: &State, op: &Operand) -> Rc<Expr> {
        match op {
            Operand::Lit(n) => Rc::new(Expr::Lit(*n)),
            Operand::Var(v) => st.frames.last().unwrap().env.get(v).cloned().unwrap_or_else(|| Rc::new(Expr::Lit(0))),
        }
    }

    fn set(st: &mut State, dst: &str, e: Rc<Expr>) {
        st.frames.last_mut().unwrap().env.insert(dst.to_string(), e);
    }

    fn goto(&self, st: &mut State, target: &str) -> Result<Flow, RefineError> {
        let fr = st.frames.last().unwrap();
        let f = &self.p.functions[fr.func];
        let nb = f.block_index(target).ok_or_else(|| RefineError::Malformed(format!("unknown label `{target}`")))?;
        let from = f.blocks[fr.block].label.clone();
        let tb = &f.blocks[nb];
        let mut vals = Vec::new();
        for inst in &tb.insts[..tb.phi_count()] {
            let Inst::Phi { dst, incoming } = inst else { unreachable!() };
            let (op, _) = incoming
                .iter()
                .find(|(_, l)| *l == from)
                .ok_or_else(|| RefineError::Malformed(format!("phi `{dst}` has no entry for `{from}`")))?;
            vals.push((dst.clone(), Self::operand(st, op)));
        }
        for (d, e) in vals {
            Self::set(st, &d, e);
        }
        let top = st.frames.len() == 1;
        let fr = st.frames.last_mut().unwrap();
        fr.block = nb;
        fr.pc = tb.phi_count();
        let n = fr.visits.entry(nb).or_insert(0);
        *n += 1;
        if *n > self.limits.loop_cap + 1 {
            return Ok(Flow::Cap(format!("loop cap {} reached at `{}`", self.limits.loop_cap, tb.label)));
        }
        if top {
            st.path.push(tb.label.clone());
            // The assertion can only fail while the flag is −1, and only the
            // region header sets it there.
            if st.flag != -1 && !self.reaches_header[nb] {
                return Ok(Flow::Done);
            }
        }
        Ok(Flow::Continue)
    }

    fn step(&mut self, st: &mut State, stack: &mut Vec<State>) -> Result<Flow, RefineError> {
        let p = self.p;
        let fr = st.frames.last().unwrap();
        let b = &p.functions[fr.func].blocks[fr.block];
        if fr.pc < b.insts.len() {
            let inst = &b.insts[fr.pc];
            st.frames.last_mut().unwrap().pc += 1;
            match inst {
                Inst::Const { dst, value } => Self::set(st, dst, Rc::new(Expr::Lit(*value))),
                Inst::Input { dst } => {
                    let k = st.inputs;
                    st.inputs += 1;
                    let s = self.new_sym(st, SymKind::Input(k))?;
                    Self::set(st, dst, s);
                }
                Inst::Unary { dst, op, arg } => {
                    let e = un(*op, Self::operand(st, arg));
                    Self::set(st, dst, e);
                }
                Inst::Binary { dst, op, lhs, rhs } => {
                    let e = bin(*op, Self::operand(st, lhs), Self::operand(st, rhs));
                    Self::set(st, dst, e);
                }
                Inst::Gep { dst, base, index, scale } => {
                    let (a, b) = (Self::operand(st, base), Self::operand(st, index));
                    let e = match (a.lit(), b.lit()) {
                        (Some(x), Some(y)) => Rc::new(Expr::Lit(gep_eval(x, y, *scale))),
                        _ => Rc::new(Expr::Gep(a, b, *scale)),
                    };
                    Self::set(st, dst, e);
                }
                Inst::Load { dst, addr } => {
                    let a = Self::operand(st, addr);
                    let e = match a.lit() {
                        Some(x) => Rc::new(Expr::Lit(load_hash(x))),
                        None => Rc::new(Expr::Load(a)),
                    };
                    Self::set(st, dst, e);
                }
                Inst::Store { .. } | Inst::Transmit { .. } | Inst::SpecBarr => {}
                Inst::Phi { .. } => unreachable!("phi after the prefix"),
                Inst::Call { dst, callee, args } => {
                    let g = p
                        .function_index(callee)
                        .ok_or_else(|| RefineError::Malformed(format!("unknown function `{callee}`")))?;
                    let gf = &p.functions[g];
                    let vals: Vec<Rc<Expr>> = args.iter().map(|a| Self::operand(st, a)).collect();
                    let env = gf.params.iter().cloned().zip(vals).collect();
                    st.frames.push(Frame {
                        func: g,
                        block: 0,
                        pc: 0,
                        env,
                        visits: HashMap::from([(0, 1)]),
                        ret_dst: dst.clone(),
                    });
                }
                Inst::FlagSet(n) => st.flag = *n,
                Inst::FlagAssertNe(n) => {
                    if st.flag == *n {
                        return Ok(Flow::Violated);
                    }
                }
            }
            return Ok(Flow::Continue);
        }
        match &b.term {
            Terminator::Ret(v) => {
                let r = v.as_ref().map(|v| Self::operand(st, v));
                let done = st.frames.pop().unwrap();
                if st.frames.is_empty() {
                    return Ok(Flow::Done);
                }
                if let Some(d) = done.ret_dst {
                    Self::set(st, &d, r.unwrap_or_else(|| Rc::new(Expr::Lit(0))));
                }
                Ok(Flow::Continue)
            }
            Terminator::Jmp(t) => self.goto(st, &t.clone()),
            Terminator::Br { cond, then_target, else_target } => {
                let c = Self::operand(st, cond);
                if let Some(v) = c.lit() {
                    let t = if v != 0 { then_target } else { else_target };
                    return self.goto(st, &t.clone());
                }
                let (then_target, else_target) = (then_target.clone(), else_target.clone());
                let mut other = st.clone();
                st.constraints.push(Constraint { expr: c.clone(), truth: true });
                other.constraints.push(Constraint { expr: c.clone(), truth: false });
                let then_ok = match self.feasible(st, &c) {
                    Ok(b) => b,
                    Err(e) => return Ok(Flow::Cap(e)),
                };
                let else_ok = match self.feasible(&other, &c) {
                    Ok(b) => b,
                    Err(e) => return Ok(Flow::Cap(e)),
                };
                match (then_ok, else_ok) {
                    (true, true) => {
                        other.pending = Some(else_target);
                        stack.push(other);
                        self.goto(st, &then_target)
                    }
                    (true, false) => self.goto(st, &then_target),
                    (false, true) => {
                        *st = other;
                        self.goto(st, &else_target)
                    }
                    (false, false) => Ok(Flow::Done),
                }
            }
        }
    }
}

enum Flow {
    Continue,
    Done,
    Violated,
    Cap(String),
}
