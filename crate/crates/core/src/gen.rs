//! Random acyclic, SSA-valid programs for property tests and benchmarks.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::ir::{BinOp, Block, Function, Inst, Operand, Program, Terminator, UnOp};

#[derive(Clone, Debug)]
pub struct GenConfig {
    pub max_blocks: usize,
    pub max_params: usize,
    pub max_inputs: usize,
    /// Non-φ instructions per block are drawn from `0..=max_insts`.
    pub max_insts: usize,
    pub allow_memory: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { max_blocks: 8, max_params: 2, max_inputs: 3, max_insts: 4, allow_memory: true }
    }
}

/// `dom[a][b]`: every entry path to `b` passes `a`. Brute force, fine at
/// generator sizes.
fn dominance(succs: &[Vec<usize>]) -> Vec<Vec<bool>> {
    let n = succs.len();
    let reach_without = |skip: usize| {
        let mut seen = vec![false; n];
        if skip == 0 {
            return seen;
        }
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(b) = stack.pop() {
            for &s in &succs[b] {
                if s != skip && !seen[s] {
                    seen[s] = true;
                    stack.push(s);
                }
            }
        }
        seen
    };
    (0..n)
        .map(|a| {
            let r = reach_without(a);
            (0..n).map(|b| a == b || !r[b]).collect()
        })
        .collect()
}

struct Builder<'r, R: Rng> {
    rng: &'r mut R,
    next: usize,
    inputs: usize,
}

impl<R: Rng> Builder<'_, R> {
    fn fresh(&mut self) -> String {
        self.next += 1;
        format!("v{}", self.next)
    }

    fn operand(&mut self, avail: &[String]) -> Operand {
        if avail.is_empty() || self.rng.random_bool(0.15) {
            Operand::Lit(self.rng.random_range(0..4))
        } else {
            Operand::Var(avail.choose(self.rng).unwrap().clone())
        }
    }

    fn var_operand(&mut self, avail: &[String]) -> Operand {
        match avail.choose(self.rng) {
            Some(v) => Operand::Var(v.clone()),
            None => Operand::Lit(self.rng.random_range(0..4)),
        }
    }
}

/// One call-free function `f` with at most `cfg.max_blocks` blocks. Block
/// `i` always falls through to `i + 1`, so every block is reachable; a
/// branch adds one forward edge.
pub fn random_function<R: Rng>(rng: &mut R, cfg: &GenConfig) -> Function {
    let n = rng.random_range(1..=cfg.max_blocks.max(1));
    let params: Vec<String> = (0..rng.random_range(0..=cfg.max_params)).map(|j| format!("p{j}")).collect();
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, s) in succs.iter_mut().enumerate().take(n.saturating_sub(1)) {
        s.push(i + 1);
        if i + 2 < n && rng.random_bool(0.5) {
            let k = rng.random_range(i + 2..n);
            s.push(k);
        }
    }
    let dom = dominance(&succs);
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (b, ss) in succs.iter().enumerate() {
        for &s in ss {
            preds[s].push(b);
        }
    }

    let mut b = Builder { rng, next: 0, inputs: 0 };
    // variables defined by each block, in order
    let mut defs: Vec<Vec<String>> = vec![Vec::new(); n];
    let mut blocks = Vec::with_capacity(n);
    let visible = |defs: &Vec<Vec<String>>, at: usize, params: &[String]| -> Vec<String> {
        let mut v: Vec<String> = params.to_vec();
        for a in 0..at {
            if dom[a][at] {
                v.extend(defs[a].iter().cloned());
            }
        }
        v
    };
    for i in 0..n {
        let mut insts = Vec::new();
        if preds[i].len() > 1 {
            let phis = b.rng.random_range(0..=2);
            for _ in 0..phis {
                let mut incoming = Vec::new();
                for &q in &preds[i] {
                    let mut at_q = visible(&defs, q, &params);
                    at_q.extend(defs[q].iter().cloned());
                    incoming.push((b.operand(&at_q), format!("B{q}")));
                }
                let dst = b.fresh();
                insts.push(Inst::Phi { dst: dst.clone(), incoming });
                defs[i].push(dst);
            }
        }
        for _ in 0..b.rng.random_range(0..=cfg.max_insts) {
            let mut avail = visible(&defs, i, &params);
            avail.extend(defs[i].iter().cloned());
            let pick = b.rng.random_range(0..10);
            let inst = match pick {
                0 if b.inputs < cfg.max_inputs => {
                    b.inputs += 1;
                    Inst::Input { dst: b.fresh() }
                }
                1 => Inst::Const { dst: b.fresh(), value: b.rng.random_range(0..4) },
                2 => {
                    let op = if b.rng.random_bool(0.5) { UnOp::Neg } else { UnOp::Not };
                    Inst::Unary { dst: b.fresh(), op, arg: b.var_operand(&avail) }
                }
                3..=5 => {
                    let op = *BinOp::ALL.choose(b.rng).unwrap();
                    let lhs = b.operand(&avail);
                    let rhs = b.operand(&avail);
                    Inst::Binary { dst: b.fresh(), op, lhs, rhs }
                }
                6 => Inst::Transmit { value: b.var_operand(&avail), speculative: b.rng.random_bool(0.7) },
                7 if cfg.allow_memory => Inst::Load { dst: b.fresh(), addr: b.var_operand(&avail) },
                8 if cfg.allow_memory => {
                    let base = b.var_operand(&avail);
                    let index = b.operand(&avail);
                    Inst::Gep { dst: b.fresh(), base, index, scale: 4 }
                }
                9 if cfg.allow_memory => {
                    let value = b.operand(&avail);
                    let addr = b.var_operand(&avail);
                    Inst::Store { value, addr }
                }
                _ => Inst::Transmit { value: b.var_operand(&avail), speculative: true },
            };
            if let Some(d) = inst.dst() {
                defs[i].push(d.to_string());
            }
            insts.push(inst);
        }
        let term = match succs[i].as_slice() {
            [] => {
                let mut avail = visible(&defs, i, &params);
                avail.extend(defs[i].iter().cloned());
                Terminator::Ret(b.rng.random_bool(0.5).then(|| b.var_operand(&avail)))
            }
            [s] => Terminator::Jmp(format!("B{s}")),
            [t, e] => {
                let mut avail = visible(&defs, i, &params);
                avail.extend(defs[i].iter().cloned());
                let cond = b.var_operand(&avail);
                let (t, e) = if b.rng.random_bool(0.5) { (t, e) } else { (e, t) };
                Terminator::Br { cond, then_target: format!("B{t}"), else_target: format!("B{e}") }
            }
            _ => unreachable!("at most two successors"),
        };
        blocks.push(Block::new(format!("B{i}"), insts, term));
    }
    Function { name: "f".into(), params, blocks }
}

pub fn random_program<R: Rng>(rng: &mut R, cfg: &GenConfig) -> Program {
    Program::new(vec![random_function(rng, cfg)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::Cfg;
    use crate::ir::{parse_program, pretty_print, validate_ssa};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn generated_programs_are_valid_and_acyclic() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..300 {
            let p = random_program(&mut rng, &GenConfig::default());
            assert!(validate_ssa(&p).is_empty(), "{}", pretty_print(&p));
            let f = &p.functions[0];
            assert!(f.blocks.len() <= 8);
            let cfg = Cfg::build(f);
            assert!(cfg.unreachable_labels().is_empty());
            for (b, ss) in cfg.succs.iter().enumerate() {
                assert!(ss.iter().all(|&s| s > b));
            }
            let inputs = f.blocks.iter().flat_map(|b| &b.insts).filter(|i| matches!(i, Inst::Input { .. })).count();
            assert!(inputs <= 3);
            assert_eq!(parse_program(&pretty_print(&p)).unwrap(), p);
        }
    }
}
