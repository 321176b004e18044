use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::ops::{ControlFlow, RangeInclusive};

use serde::Serialize;

use super::interp::{load_hash, ObsKind, Valuation, DEFAULT_FUEL};
use super::{for_each_valuation, OracleError};
use crate::ir::{gep_eval, Block, Function, Inst, Operand, Program, Terminator};

/// Name of the wrapper generated around a checked function.
pub const HARNESS: &str = "__harness";

/// `(function, variable, activation)`.
pub type Label = (String, String, usize);

/// Frontier block labels per function and variable.
pub type FrontierMap = BTreeMap<String, BTreeMap<String, BTreeSet<String>>>;

fn original_name(n: &str) -> &str {
    n.strip_suffix(".protected").unwrap_or(n)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PropertyConfig {
    pub domain: RangeInclusive<i32>,
    /// Speculative instructions executed per misprediction.
    pub window: usize,
    /// Nested mispredictions allowed inside a speculative path.
    pub depth: usize,
    pub max_runs: usize,
    /// Inputs enumerated per run; later inputs read the domain's low end.
    pub max_inputs: usize,
    pub fuel: usize,
    /// Functions whose frames are protected by their callers and carry no
    /// labels of their own.
    pub enforced: BTreeSet<String>,
}

impl Default for PropertyConfig {
    fn default() -> Self {
        PropertyConfig {
            domain: 0..=3,
            window: 16,
            depth: 1,
            max_runs: 200_000,
            max_inputs: 6,
            fuel: DEFAULT_FUEL,
            enforced: BTreeSet::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SpecObservation {
    pub function: String,
    pub block: String,
    pub kind: ObsKind,
    pub value: i32,
    pub labels: Vec<Label>,
    /// Labels whose frontier the non-speculative prefix had not entered.
    pub violating: Vec<Label>,
}

/// One mispredicted path. `schedule[0]` is the index of the mispredicted
/// dynamic branch in the non-speculative run, later entries index branches
/// inside the enclosing speculative path.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SpecExecution {
    pub schedule: Vec<usize>,
    pub fork_function: String,
    pub fork_block: String,
    pub wrong_target: String,
    pub steps: usize,
    pub halted_by_barrier: bool,
    pub observations: Vec<SpecObservation>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Exploration {
    pub ret: Option<i32>,
    /// Final top-frame values of the non-speculative run.
    pub values: BTreeMap<String, i32>,
    pub inputs_used: usize,
    pub executions: Vec<SpecExecution>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub function: String,
    /// Harness arguments: the gate followed by the function's arguments.
    pub args: Vec<i32>,
    pub inputs: Vec<i32>,
    pub schedule: Vec<usize>,
    pub observation: SpecObservation,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass { runs: usize },
    Fail(Box<Witness>),
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass { .. })
    }
}

type Taint = BTreeSet<u32>;

#[derive(Clone, Debug)]
struct Val {
    v: i32,
    t: Taint,
}

#[derive(Clone, Debug)]
struct Frame {
    func: usize,
    block: usize,
    pc: usize,
    env: HashMap<String, Val>,
    act: usize,
    own_labels: bool,
    ret_dst: Option<String>,
}

#[derive(Clone, Debug)]
struct Machine {
    frames: Vec<Frame>,
    input_pos: usize,
    ret: Option<i32>,
    values: BTreeMap<String, i32>,
}

struct Ctx<'a> {
    p: &'a Program,
    frontiers: &'a FrontierMap,
    enforced: &'a BTreeSet<String>,
    inputs: &'a [i32],
    labels: Vec<Label>,
    label_ids: HashMap<Label, u32>,
    next_act: usize,
}

impl Ctx<'_> {
    fn intern(&mut self, l: Label) -> u32 {
        if let Some(&i) = self.label_ids.get(&l) {
            return i;
        }
        let i = self.labels.len() as u32;
        self.labels.push(l.clone());
        self.label_ids.insert(l, i);
        i
    }

    fn violates(&self, id: u32, crossed: &HashSet<(usize, String)>) -> bool {
        let (g, x, act) = &self.labels[id as usize];
        let Some(vars) = self.frontiers.get(g) else { return false };
        match vars.get(x) {
            Some(fr) => !fr.iter().any(|b| crossed.contains(&(*act, b.clone()))),
            None => true,
        }
    }
}

enum Step {
    Ran,
    Enter(usize, String),
    Obs { kind: ObsKind, value: i32, taint: Taint, func: usize, block: usize },
    Barrier,
    Branch { taken: String, other: String },
    Returned,
}

impl Machine {
    fn operand(&self, op: &Operand) -> Result<Val, OracleError> {
        match op {
            Operand::Lit(n) => Ok(Val { v: *n, t: Taint::new() }),
            Operand::Var(v) => {
                self.frames.last().unwrap().env.get(v).cloned().ok_or_else(|| OracleError::Undefined(v.clone()))
            }
        }
    }

    fn derive(&self, cx: &mut Ctx<'_>, dst: &str, from: &[&Taint]) -> Taint {
        let fr = self.frames.last().unwrap();
        if fr.own_labels {
            let g = original_name(&cx.p.functions[fr.func].name).to_string();
            Taint::from([cx.intern((g, dst.to_string(), fr.act))])
        } else {
            from.iter().flat_map(|t| t.iter().copied()).collect()
        }
    }

    fn set(&mut self, dst: &str, v: i32, t: Taint) {
        self.frames.last_mut().unwrap().env.insert(dst.to_string(), Val { v, t });
    }

    fn enter(
        &mut self,
        cx: &mut Ctx<'_>,
        func: usize,
        args: Vec<Val>,
        ret_dst: Option<String>,
    ) -> Result<Step, OracleError> {
        let f = &cx.p.functions[func];
        if args.len() != f.params.len() {
            return Err(OracleError::Arity { function: f.name.clone(), expected: f.params.len(), got: args.len() });
        }
        let act = cx.next_act;
        cx.next_act += 1;
        let name = original_name(&f.name).to_string();
        let own_labels = !cx.enforced.contains(&name);
        let mut env = HashMap::new();
        for (p, a) in f.params.iter().zip(args) {
            let t = if own_labels { Taint::from([cx.intern((name.clone(), p.clone(), act))]) } else { a.t };
            env.insert(p.clone(), Val { v: a.v, t });
        }
        self.frames.push(Frame { func, block: 0, pc: 0, env, act, own_labels, ret_dst });
        Ok(Step::Enter(act, f.blocks[0].label.clone()))
    }

    fn goto(&mut self, cx: &mut Ctx<'_>, label: &str) -> Result<Step, OracleError> {
        let fr = self.frames.last().unwrap();
        let f = &cx.p.functions[fr.func];
        let nb = f
            .block_index(label)
            .ok_or_else(|| OracleError::BadLabel { function: f.name.clone(), label: label.to_string() })?;
        let from = f.blocks[fr.block].label.as_str();
        let target = &f.blocks[nb];
        let mut vals = Vec::new();
        for inst in &target.insts[..target.phi_count()] {
            let Inst::Phi { dst, incoming } = inst else { unreachable!() };
            let (op, _) = incoming
                .iter()
                .find(|(_, l)| l == from)
                .ok_or_else(|| OracleError::BadPhi { function: f.name.clone(), block: target.label.clone() })?;
            let v = self.operand(op)?;
            let t = self.derive(cx, dst, &[&v.t]);
            vals.push((dst.as_str(), v.v, t));
        }
        for (d, v, t) in vals {
            self.set(d, v, t);
        }
        let fr = self.frames.last_mut().unwrap();
        fr.block = nb;
        fr.pc = target.phi_count();
        Ok(Step::Enter(fr.act, target.label.clone()))
    }

    fn step(&mut self, cx: &mut Ctx<'_>, spec: bool) -> Result<Step, OracleError> {
        let p = cx.p;
        let fr = self.frames.last().unwrap();
        let (func, block, pc) = (fr.func, fr.block, fr.pc);
        let b: &Block = &p.functions[func].blocks[block];
        if pc < b.insts.len() {
            self.frames.last_mut().unwrap().pc += 1;
            return self.exec(cx, &b.insts[pc], spec, func, block);
        }
        match &b.term {
            Terminator::Ret(v) => {
                let r = v.as_ref().map(|v| self.operand(v)).transpose()?;
                let done = self.frames.pop().unwrap();
                match self.frames.last() {
                    None => {
                        self.ret = r.map(|r| r.v);
                        self.values = done.env.into_iter().map(|(k, v)| (k, v.v)).collect();
                        Ok(Step::Returned)
                    }
                    Some(_) => {
                        if let Some(d) = done.ret_dst {
                            let r = r.unwrap_or(Val { v: 0, t: Taint::new() });
                            let t = self.derive(cx, &d, &[&r.t]);
                            self.set(&d, r.v, t);
                        }
                        Ok(Step::Ran)
                    }
                }
            }
            Terminator::Jmp(t) => self.goto(cx, t),
            Terminator::Br { cond, then_target, else_target } => {
                let c = self.operand(cond)?;
                let (taken, other) = if c.v != 0 { (then_target, else_target) } else { (else_target, then_target) };
                Ok(Step::Branch { taken: taken.clone(), other: other.clone() })
            }
        }
    }

    fn exec(
        &mut self,
        cx: &mut Ctx<'_>,
        inst: &Inst,
        spec: bool,
        func: usize,
        block: usize,
    ) -> Result<Step, OracleError> {
        match inst {
            Inst::Const { dst, value } => self.set(dst, *value, Taint::new()),
            Inst::Input { dst } => {
                let v = match cx.inputs.get(self.input_pos) {
                    Some(&v) => v,
                    None if spec => 0,
                    None => return Err(OracleError::InputExhausted),
                };
                self.input_pos += 1;
                let t = self.derive(cx, dst, &[]);
                self.set(dst, v, t);
            }
            Inst::Unary { dst, op, arg } => {
                let a = self.operand(arg)?;
                let t = self.derive(cx, dst, &[&a.t]);
                self.set(dst, op.eval(a.v), t);
            }
            Inst::Binary { dst, op, lhs, rhs } => {
                let (a, b) = (self.operand(lhs)?, self.operand(rhs)?);
                let t = self.derive(cx, dst, &[&a.t, &b.t]);
                self.set(dst, op.eval(a.v, b.v), t);
            }
            Inst::Gep { dst, base, index, scale } => {
                let (a, b) = (self.operand(base)?, self.operand(index)?);
                let t = self.derive(cx, dst, &[&a.t, &b.t]);
                self.set(dst, gep_eval(a.v, b.v, *scale), t);
            }
            Inst::Load { dst, addr } => {
                let a = self.operand(addr)?;
                let t = self.derive(cx, dst, &[&a.t]);
                self.set(dst, load_hash(a.v), t);
                return Ok(Step::Obs { kind: ObsKind::Load, value: a.v, taint: a.t, func, block });
            }
            Inst::Store { value, addr } => {
                self.operand(value)?;
                self.operand(addr)?;
            }
            Inst::Transmit { value, speculative } => {
                let v = self.operand(value)?;
                if *speculative {
                    return Ok(Step::Obs { kind: ObsKind::Transmit, value: v.v, taint: v.t, func, block });
                }
            }
            Inst::Call { dst, callee, args } => {
                let g = cx.p.function_index(callee).ok_or_else(|| OracleError::UnknownFunction(callee.clone()))?;
                let vals = args.iter().map(|a| self.operand(a)).collect::<Result<Vec<_>, _>>()?;
                return self.enter(cx, g, vals, dst.clone());
            }
            Inst::SpecBarr if spec => return Ok(Step::Barrier),
            Inst::SpecBarr | Inst::FlagSet(_) | Inst::FlagAssertNe(_) => {}
            Inst::Phi { .. } => unreachable!("phi after the prefix"),
        }
        Ok(Step::Ran)
    }
}

struct Explorer<'a, 'b> {
    cx: &'b mut Ctx<'a>,
    window: usize,
    /// Only follow this misprediction schedule (replay).
    only: Option<&'b [usize]>,
    out: Vec<SpecExecution>,
}

impl Explorer<'_, '_> {
    fn wanted(&self, prefix: &[usize], idx: usize) -> bool {
        match self.only {
            None => true,
            Some(s) => s.len() > prefix.len() && s[..prefix.len()] == *prefix && s[prefix.len()] == idx,
        }
    }

    fn fork(
        &mut self,
        m: &Machine,
        other: &str,
        crossed: &HashSet<(usize, String)>,
        schedule: Vec<usize>,
        budget: usize,
        depth: usize,
    ) {
        let fr = m.frames.last().unwrap();
        let f = &self.cx.p.functions[fr.func];
        let mut exec = SpecExecution {
            schedule,
            fork_function: f.name.clone(),
            fork_block: f.blocks[fr.block].label.clone(),
            wrong_target: other.to_string(),
            steps: 0,
            halted_by_barrier: false,
            observations: Vec::new(),
        };
        let mut s = m.clone();
        if s.goto(self.cx, other).is_err() {
            self.out.push(exec);
            return;
        }
        let mut j = 0;
        let mut nested = Vec::new();
        while exec.steps < budget {
            exec.steps += 1;
            match s.step(self.cx, true) {
                Err(_) | Ok(Step::Returned) => break,
                Ok(Step::Barrier) => {
                    exec.halted_by_barrier = true;
                    break;
                }
                Ok(Step::Obs { kind, value, taint, func, block }) => {
                    let f = &self.cx.p.functions[func];
                    let violating = taint
                        .iter()
                        .filter(|&&id| self.cx.violates(id, crossed))
                        .map(|&id| self.cx.labels[id as usize].clone())
                        .collect();
                    exec.observations.push(SpecObservation {
                        function: f.name.clone(),
                        block: f.blocks[block].label.clone(),
                        kind,
                        value,
                        labels: taint.iter().map(|&id| self.cx.labels[id as usize].clone()).collect(),
                        violating,
                    });
                }
                Ok(Step::Branch { taken, other }) => {
                    if depth > 0 && self.wanted(&exec.schedule, j) {
                        let mut sched = exec.schedule.clone();
                        sched.push(j);
                        nested.push((s.clone(), other, sched, budget - exec.steps));
                    }
                    if s.goto(self.cx, &taken).is_err() {
                        break;
                    }
                    j += 1;
                }
                Ok(Step::Ran | Step::Enter(..)) => {}
            }
        }
        self.out.push(exec);
        for (state, other, sched, rest) in nested {
            self.fork(&state, &other, crossed, sched, rest, depth - 1);
        }
    }
}

fn explore(
    p: &Program,
    name: &str,
    v: &Valuation,
    frontiers: &FrontierMap,
    cfg: &PropertyConfig,
    only: Option<&[usize]>,
) -> Result<Exploration, OracleError> {
    let func = p.function_index(name).ok_or_else(|| OracleError::UnknownFunction(name.to_string()))?;
    let mut cx = Ctx {
        p,
        frontiers,
        enforced: &cfg.enforced,
        inputs: &v.inputs,
        labels: Vec::new(),
        label_ids: HashMap::new(),
        next_act: 0,
    };
    let mut m = Machine { frames: Vec::new(), input_pos: 0, ret: None, values: BTreeMap::new() };
    let args = v.args.iter().map(|&a| Val { v: a, t: Taint::new() }).collect();
    let mut crossed: HashSet<(usize, String)> = HashSet::new();
    if let Step::Enter(a, b) = m.enter(&mut cx, func, args, None)? {
        crossed.insert((a, b));
    }
    let mut ex = Explorer { cx: &mut cx, window: cfg.window, only, out: Vec::new() };
    let mut fuel = cfg.fuel;
    let mut branch = 0usize;
    loop {
        if fuel == 0 {
            return Err(OracleError::FuelExhausted);
        }
        fuel -= 1;
        match m.step(ex.cx, false)? {
            Step::Enter(a, b) => {
                crossed.insert((a, b));
            }
            Step::Branch { taken, other } => {
                if cfg.depth > 0 && ex.wanted(&[], branch) {
                    let w = ex.window;
                    ex.fork(&m, &other, &crossed, vec![branch], w, cfg.depth - 1);
                }
                if let Step::Enter(a, b) = m.goto(ex.cx, &taken)? {
                    crossed.insert((a, b));
                }
                branch += 1;
            }
            Step::Returned => break,
            Step::Ran | Step::Obs { .. } | Step::Barrier => {}
        }
    }
    let executions = ex.out;
    Ok(Exploration { ret: m.ret, values: m.values, inputs_used: m.input_pos, executions })
}

/// Runs `name` on `v`, exploring every misprediction of every conditional
/// branch. Observations are judged against `frontiers`.
pub fn speculative_explore(
    p: &Program,
    name: &str,
    v: &Valuation,
    frontiers: &FrontierMap,
    cfg: &PropertyConfig,
) -> Result<Exploration, OracleError> {
    explore(p, name, v, frontiers, cfg, None)
}

/// `p` plus a wrapper `__harness(gate, args..)` that calls `target` only
/// when `gate` is non-zero, so the call itself can be mispredicted.
pub fn harness_program(p: &Program, target: &str) -> Result<Program, OracleError> {
    let f = p.function(target).ok_or_else(|| OracleError::UnknownFunction(target.to_string()))?;
    let args: Vec<String> = (0..f.params.len()).map(|i| format!("__a{i}")).collect();
    let mut params = vec!["__gate".to_string()];
    params.extend(args.iter().cloned());
    let h = Function {
        name: HARNESS.to_string(),
        params,
        blocks: vec![
            Block::new(
                "__entry",
                vec![],
                Terminator::Br {
                    cond: Operand::var("__gate"),
                    then_target: "__call".into(),
                    else_target: "__done".into(),
                },
            ),
            Block::new(
                "__call",
                vec![Inst::Call {
                    dst: None,
                    callee: target.to_string(),
                    args: args.iter().map(Operand::var).collect(),
                }],
                Terminator::Jmp("__done".into()),
            ),
            Block::new("__done", vec![], Terminator::Ret(None)),
        ],
    };
    let mut out = p.clone();
    out.functions.push(h);
    Ok(out)
}

/// Checks that no speculative observation reachable from `target` over the
/// domain carries a value whose frontier the non-speculative run had not
/// yet entered. Stops at the first violation.
pub fn check_frontier_property(
    p: &Program,
    target: &str,
    frontiers: &FrontierMap,
    cfg: &PropertyConfig,
) -> Result<Verdict, OracleError> {
    let h = harness_program(p, target)?;
    let arity = p.function(target).map(|f| f.params.len()).unwrap_or(0);
    let mut runs = 0;
    for gate in [0, 1] {
        let mut found: Option<Witness> = None;
        let r = for_each_valuation(arity, cfg.domain.clone(), cfg.max_inputs, cfg.max_runs, |v| {
            let mut args = vec![gate];
            args.extend(&v.args);
            let hv = Valuation { args, inputs: v.inputs.clone() };
            let ex = explore(&h, HARNESS, &hv, frontiers, cfg, None)?;
            if found.is_none() {
                'outer: for e in &ex.executions {
                    for o in &e.observations {
                        if !o.violating.is_empty() {
                            let mut inputs = hv.inputs.clone();
                            inputs.truncate(ex.inputs_used + cfg.window);
                            found = Some(Witness {
                                function: target.to_string(),
                                args: hv.args.clone(),
                                inputs,
                                schedule: e.schedule.clone(),
                                observation: o.clone(),
                            });
                            break 'outer;
                        }
                    }
                }
            }
            if found.is_some() {
                return Ok(ControlFlow::Break(()));
            }
            Ok(ControlFlow::Continue(ex.inputs_used))
        });
        match (r, found) {
            (_, Some(w)) => return Ok(Verdict::Fail(Box::new(w))),
            (Ok(n), None) => runs += n,
            (Err(e), None) => return Err(e),
        }
    }
    Ok(Verdict::Pass { runs })
}

/// Re-runs a witness, following only its misprediction schedule, and
/// returns the violating observation if it is reproduced.
pub fn replay(
    p: &Program,
    w: &Witness,
    frontiers: &FrontierMap,
    cfg: &PropertyConfig,
) -> Result<Option<SpecObservation>, OracleError> {
    let h = harness_program(p, &w.function)?;
    let v = Valuation { args: w.args.clone(), inputs: w.inputs.clone() };
    let ex = explore(&h, HARNESS, &v, frontiers, cfg, Some(&w.schedule))?;
    Ok(ex
        .executions
        .into_iter()
        .filter(|e| e.schedule == w.schedule)
        .flat_map(|e| e.observations)
        .find(|o| *o == w.observation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;
    use crate::oracle::interpret;

    fn fr(entries: &[(&str, &[&str])]) -> BTreeMap<String, BTreeSet<String>> {
        entries.iter().map(|(v, bs)| (v.to_string(), bs.iter().map(|b| b.to_string()).collect())).collect()
    }

    const LEAKY: &str = "fn f(x, c) {
A:
  br c, B, C
B:
  t = load x
  jmp C
C:
  ret
}";

    #[test]
    fn mispredicted_load_is_observed() {
        let p = parse_program(LEAKY).unwrap();
        let frontiers = FrontierMap::from([("f".to_string(), fr(&[("x", &["B"]), ("c", &["A"])]))]);
        let v = Valuation { args: vec![7, 0], inputs: vec![] };
        let ex = speculative_explore(&p, "f", &v, &frontiers, &PropertyConfig::default()).unwrap();
        assert_eq!(ex.executions.len(), 1);
        let o = &ex.executions[0].observations[0];
        assert_eq!((o.kind, o.value), (ObsKind::Load, 7));
        assert_eq!(o.violating, vec![("f".to_string(), "x".to_string(), 0)]);
        // taking B for real is fine
        let v = Valuation { args: vec![7, 1], inputs: vec![] };
        let ex = speculative_explore(&p, "f", &v, &frontiers, &PropertyConfig::default()).unwrap();
        assert!(ex.executions.iter().all(|e| e.observations.is_empty()));
    }

    #[test]
    fn rollback_restores_state() {
        let src =
            "fn f(a, c) {\nA: b = add a, 1\nbr c, B, C\nB: d = mul b, 2\njmp C\nC: e = phi [b, A], [d, B]\nret e\n}";
        let p = parse_program(src).unwrap();
        for c in 0..2 {
            let v = Valuation { args: vec![3, c], inputs: vec![] };
            let ex = speculative_explore(&p, "f", &v, &FrontierMap::new(), &PropertyConfig::default()).unwrap();
            let t = interpret(&p, "f", &v, 100).unwrap();
            assert_eq!(ex.ret, t.ret);
            assert_eq!(ex.values, t.values);
        }
    }

    #[test]
    fn barrier_stops_speculation_and_witness_replays() {
        let p = parse_program(LEAKY).unwrap();
        let frontiers = FrontierMap::from([("f".to_string(), fr(&[("x", &["B"]), ("c", &["A"])]))]);
        let cfg = PropertyConfig::default();
        let Verdict::Fail(w) = check_frontier_property(&p, "f", &frontiers, &cfg).unwrap() else {
            panic!("expected a violation");
        };
        assert_eq!(replay(&p, &w, &frontiers, &cfg).unwrap().as_ref(), Some(&w.observation));

        let guarded = LEAKY.replace("B:\n  t = load x", "B:\n  specbarr\n  t = load x");
        let p = parse_program(&guarded).unwrap();
        assert!(check_frontier_property(&p, "f", &frontiers, &cfg).unwrap().is_pass());
    }

    #[test]
    fn enforced_callee_carries_caller_labels() {
        let src = "fn g(a) {\nA: t = load a\nret\n}\nfn f(x) {\nA: call g(x)\nret\n}";
        let p = parse_program(src).unwrap();
        let frontiers =
            FrontierMap::from([("f".to_string(), fr(&[("x", &["A"])])), ("g".to_string(), fr(&[("a", &["A"])]))]);
        let cfg = PropertyConfig { enforced: BTreeSet::from(["g".to_string()]), ..Default::default() };
        let Verdict::Fail(w) = check_frontier_property(&p, "f", &frontiers, &cfg).unwrap() else {
            panic!("expected a violation");
        };
        assert_eq!(w.args[0], 0);
        assert_eq!(w.observation.labels[0].1, "x");
    }
}
