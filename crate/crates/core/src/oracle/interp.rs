use std::collections::BTreeMap;

use serde::Serialize;

use super::OracleError;
use crate::cfg::{Cfg, EdgeId, Node};
use crate::ir::{gep_eval, Function, Inst, Operand, Program, Terminator};

/// Pseudo-value returned by a load from `addr`; memory is not modeled.
pub fn load_hash(addr: i32) -> i32 {
    let mut z = (addr as u32 as u64).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (z ^ (z >> 31)) as i32
}

/// Parameter values plus the values consumed by `input`, in dynamic order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Valuation {
    pub args: Vec<i32>,
    pub inputs: Vec<i32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ObsKind {
    Load,
    Store,
    Transmit,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Observation {
    pub function: String,
    pub block: String,
    pub index: usize,
    pub kind: ObsKind,
    pub value: i32,
}

/// A non-speculative run of one function (callees are executed but only
/// the top frame's control flow is recorded).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    /// Edges of the top function's CFG, starting with the entry edge.
    pub edges: Vec<EdgeId>,
    pub blocks: Vec<usize>,
    /// `(visit, instruction index)` of every top-frame instruction executed,
    /// where `visit` indexes `blocks`.
    pub executed: Vec<(usize, usize)>,
    /// Branch conditions evaluated in the top frame: `(block, value)`.
    pub branches: Vec<(usize, i32)>,
    pub observations: Vec<Observation>,
    pub ret: Option<i32>,
    /// Set when a `flag.assert_ne` saw the flag equal to its operand.
    pub flag_violated: bool,
    pub inputs_used: usize,
    /// Final values of the top frame's variables.
    pub values: BTreeMap<String, i32>,
}

pub(crate) fn eval_operand(env: &BTreeMap<String, i32>, op: &Operand) -> Result<i32, OracleError> {
    match op {
        Operand::Lit(n) => Ok(*n),
        Operand::Var(v) => env.get(v).copied().ok_or_else(|| OracleError::Undefined(v.clone())),
    }
}

struct Run<'a> {
    p: &'a Program,
    inputs: &'a [i32],
    next_input: usize,
    fuel: usize,
    flag: i32,
    trace: Trace,
}

impl Run<'_> {
    fn call(&mut self, f: &Function, args: &[i32], top: bool) -> Result<Option<i32>, OracleError> {
        if args.len() != f.params.len() {
            return Err(OracleError::Arity { function: f.name.clone(), expected: f.params.len(), got: args.len() });
        }
        let cfg = if top { Some(Cfg::build(f)) } else { None };
        let mut env: BTreeMap<String, i32> = f.params.iter().cloned().zip(args.iter().copied()).collect();
        let mut block = 0usize;
        let mut prev: Option<usize> = None;
        if let Some(cfg) = &cfg {
            self.trace.edges.push(cfg.entry_edge());
        }
        loop {
            if top {
                self.trace.blocks.push(block);
            }
            let b = &f.blocks[block];
            // φs read their inputs simultaneously.
            let n_phi = b.phi_count();
            let mut phi_vals = Vec::with_capacity(n_phi);
            for inst in &b.insts[..n_phi] {
                let Inst::Phi { dst, incoming } = inst else { unreachable!() };
                let from = prev.map(|p| f.blocks[p].label.as_str());
                let (op, _) = incoming
                    .iter()
                    .find(|(_, l)| Some(l.as_str()) == from)
                    .ok_or_else(|| OracleError::BadPhi { function: f.name.clone(), block: b.label.clone() })?;
                phi_vals.push((dst.clone(), eval_operand(&env, op)?));
            }
            for (i, (d, v)) in phi_vals.into_iter().enumerate() {
                env.insert(d, v);
                if top {
                    self.trace.executed.push((self.trace.blocks.len() - 1, i));
                }
            }
            for (index, inst) in b.insts.iter().enumerate().skip(n_phi) {
                self.tick()?;
                if top {
                    self.trace.executed.push((self.trace.blocks.len() - 1, index));
                }
                self.exec(f, block, index, inst, &mut env)?;
            }
            self.tick()?;
            let next = match &b.term {
                Terminator::Ret(v) => {
                    let r = v.as_ref().map(|v| eval_operand(&env, v)).transpose()?;
                    if let Some(cfg) = &cfg {
                        let e = cfg.out_edges[block].iter().copied().find(|&e| cfg.edges[e].to == Node::Exit).unwrap();
                        self.trace.edges.push(e);
                        self.trace.ret = r;
                        self.trace.values = env;
                    }
                    return Ok(r);
                }
                Terminator::Jmp(t) => t,
                Terminator::Br { cond, then_target, else_target } => {
                    let c = eval_operand(&env, cond)?;
                    if top {
                        self.trace.branches.push((block, c));
                    }
                    if c != 0 {
                        then_target
                    } else {
                        else_target
                    }
                }
            };
            let nb = f
                .block_index(next)
                .ok_or_else(|| OracleError::BadLabel { function: f.name.clone(), label: next.clone() })?;
            if let Some(cfg) = &cfg {
                let e = cfg.out_edges[block].iter().copied().find(|&e| cfg.edges[e].to == Node::Block(nb)).unwrap();
                self.trace.edges.push(e);
            }
            prev = Some(block);
            block = nb;
        }
    }

    fn tick(&mut self) -> Result<(), OracleError> {
        if self.fuel == 0 {
            return Err(OracleError::FuelExhausted);
        }
        self.fuel -= 1;
        Ok(())
    }

    fn observe(&mut self, f: &Function, block: usize, index: usize, kind: ObsKind, value: i32) {
        self.trace.observations.push(Observation {
            function: f.name.clone(),
            block: f.blocks[block].label.clone(),
            index,
            kind,
            value,
        });
    }

    fn exec(
        &mut self,
        f: &Function,
        block: usize,
        index: usize,
        inst: &Inst,
        env: &mut BTreeMap<String, i32>,
    ) -> Result<(), OracleError> {
        match inst {
            Inst::Const { dst, value } => {
                env.insert(dst.clone(), *value);
            }
            Inst::Input { dst } => {
                let v = *self.inputs.get(self.next_input).ok_or(OracleError::InputExhausted)?;
                self.next_input += 1;
                self.trace.inputs_used = self.next_input;
                env.insert(dst.clone(), v);
            }
            Inst::Unary { dst, op, arg } => {
                let v = op.eval(eval_operand(env, arg)?);
                env.insert(dst.clone(), v);
            }
            Inst::Binary { dst, op, lhs, rhs } => {
                let v = op.eval(eval_operand(env, lhs)?, eval_operand(env, rhs)?);
                env.insert(dst.clone(), v);
            }
            Inst::Gep { dst, base, index: idx, scale } => {
                let v = gep_eval(eval_operand(env, base)?, eval_operand(env, idx)?, *scale);
                env.insert(dst.clone(), v);
            }
            Inst::Load { dst, addr } => {
                let a = eval_operand(env, addr)?;
                self.observe(f, block, index, ObsKind::Load, a);
                env.insert(dst.clone(), load_hash(a));
            }
            Inst::Store { value, addr } => {
                eval_operand(env, value)?;
                let a = eval_operand(env, addr)?;
                self.observe(f, block, index, ObsKind::Store, a);
            }
            Inst::Transmit { value, .. } => {
                let v = eval_operand(env, value)?;
                self.observe(f, block, index, ObsKind::Transmit, v);
            }
            Inst::Phi { .. } => unreachable!("phi after the prefix"),
            Inst::Call { dst, callee, args } => {
                let g = self.p.function(callee).ok_or_else(|| OracleError::UnknownFunction(callee.clone()))?;
                let vals = args.iter().map(|a| eval_operand(env, a)).collect::<Result<Vec<_>, _>>()?;
                let r = self.call(g, &vals, false)?;
                if let Some(d) = dst {
                    env.insert(d.clone(), r.unwrap_or(0));
                }
            }
            Inst::SpecBarr => {}
            Inst::FlagSet(n) => self.flag = *n,
            Inst::FlagAssertNe(n) => {
                if self.flag == *n {
                    self.trace.flag_violated = true;
                }
            }
        }
        Ok(())
    }
}

/// Default instruction budget for one run.
pub const DEFAULT_FUEL: usize = 100_000;

/// Runs `name` non-speculatively on `v`.
pub fn interpret(p: &Program, name: &str, v: &Valuation, fuel: usize) -> Result<Trace, OracleError> {
    let f = p.function(name).ok_or_else(|| OracleError::UnknownFunction(name.to_string()))?;
    let mut run = Run { p, inputs: &v.inputs, next_input: 0, fuel, flag: 0, trace: Trace::default() };
    run.call(f, &v.args, true)?;
    Ok(run.trace)
}

/// Runs a function that makes no calls.
pub fn interpret_function(f: &Function, v: &Valuation, fuel: usize) -> Result<Trace, OracleError> {
    let p = Program { functions: vec![f.clone()], entry_function: Some(f.name.clone()) };
    interpret(&p, &f.name, v, fuel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    #[test]
    fn straight_line() {
        let p = parse_program("fn f(a) {\nA: b = add a, 1\nc = mul b, 3\nret c\n}").unwrap();
        for a in 0..4 {
            let t = interpret(&p, "f", &Valuation { args: vec![a], inputs: vec![] }, 100).unwrap();
            assert_eq!(t.edges, vec![0, 1]);
            assert_eq!(t.ret, Some((a + 1) * 3));
        }
    }

    #[test]
    fn loop_and_inputs() {
        let src = "fn f(n) {\nA: jmp H\nH: i = phi [0, A], [j, H]\nx = input\ntransmit x\nj = add i, 1\nc = lt j, n\nbr c, H, X\nX: ret i\n}";
        let p = parse_program(src).unwrap();
        let t = interpret(&p, "f", &Valuation { args: vec![3], inputs: vec![7, 8, 9] }, 1000).unwrap();
        assert_eq!(t.ret, Some(2));
        assert_eq!(t.observations.iter().map(|o| o.value).collect::<Vec<_>>(), [7, 8, 9]);
        let err = interpret(&p, "f", &Valuation { args: vec![4], inputs: vec![1, 2, 3] }, 1000).unwrap_err();
        assert_eq!(err, OracleError::InputExhausted);
        let err = interpret(&p, "f", &Valuation { args: vec![1000], inputs: vec![0; 1000] }, 200).unwrap_err();
        assert_eq!(err, OracleError::FuelExhausted);
    }

    #[test]
    fn calls_and_loads() {
        let src = "fn g(a) {\nA: v = load a\nret v\n}\nfn f(x) {\nA: r = call g(x)\nret r\n}";
        let p = parse_program(src).unwrap();
        let t = interpret(&p, "f", &Valuation { args: vec![5], inputs: vec![] }, 100).unwrap();
        assert_eq!(t.ret, Some(load_hash(5)));
        assert_eq!(t.observations[0].function, "g");
        assert_eq!(t.observations[0].kind, ObsKind::Load);
    }
}
