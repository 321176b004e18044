use std::collections::BTreeSet;

use super::{natural_loops, Cfg, CfgError, DomInfo};
use crate::ir::{Block, Function, Inst, Operand, Terminator};

/// Hands out labels and variable names not yet used in a function.
#[derive(Clone, Debug)]
pub(crate) struct NameGen {
    used: BTreeSet<String>,
}

impl NameGen {
    pub(crate) fn new(f: &Function) -> Self {
        let mut used: BTreeSet<String> = f.blocks.iter().map(|b| b.label.clone()).collect();
        used.extend(f.variables().into_iter().map(str::to_string));
        used.insert(f.name.clone());
        NameGen { used }
    }

    pub(crate) fn fresh(&mut self, base: &str) -> String {
        let mut name = base.to_string();
        let mut i = 1;
        while self.used.contains(&name) || crate::ir::KEYWORDS.contains(&name.as_str()) {
            name = format!("{base}.{i}");
            i += 1;
        }
        self.used.insert(name.clone());
        name
    }
}

fn retarget(term: &mut Terminator, from: &str, to: &str) {
    term.for_each_target_mut(|t| {
        if t == from {
            *t = to.to_string();
        }
    });
}

/// Gives every loop a unique preheader and a single latch.
pub fn simplify_loops(f: &Function) -> Result<Function, CfgError> {
    let mut f = f.clone();
    let mut names = NameGen::new(&f);
    loop {
        let cfg = Cfg::build(&f);
        let dom = DomInfo::compute(&cfg);
        let loops = natural_loops(&cfg, &dom, &f.name)?;
        let Some(l) = loops.iter().find(|l| l.preheader.is_none() || l.latches.len() > 1) else {
            return Ok(f);
        };
        let header = f.blocks[l.header].label.clone();
        if l.preheader.is_none() {
            let outside: Vec<String> = l.outside_preds(&cfg).iter().map(|&p| f.blocks[p].label.clone()).collect();
            let ph = names.fresh(&format!("{header}.preheader"));
            let phis = split_header_phis(&mut f, l.header, &outside, &ph, &mut names, "ph");
            for p in &outside {
                let b = f.block_index(p).unwrap();
                retarget(&mut f.blocks[b].term, &header, &ph);
            }
            f.blocks.insert(l.header, Block::new(ph, phis, Terminator::Jmp(header)));
        } else {
            let latches: Vec<String> = l.latches.iter().map(|&p| f.blocks[p].label.clone()).collect();
            let lt = names.fresh(&format!("{header}.latch"));
            let phis = split_header_phis(&mut f, l.header, &latches, &lt, &mut names, "latch");
            for p in &latches {
                let b = f.block_index(p).unwrap();
                retarget(&mut f.blocks[b].term, &header, &lt);
            }
            let at = l.latches.iter().max().unwrap() + 1;
            f.blocks.insert(at, Block::new(lt, phis, Terminator::Jmp(header)));
        }
    }
}

/// Moves the header φ entries coming from `group` into a new block `via`.
/// Returns the φs for the new block (none when `group` has one member, in
/// which case the value is forwarded directly).
fn split_header_phis(
    f: &mut Function,
    header: usize,
    group: &[String],
    via: &str,
    names: &mut NameGen,
    suffix: &str,
) -> Vec<Inst> {
    let mut new_phis = Vec::new();
    for inst in f.blocks[header].insts.iter_mut() {
        let Inst::Phi { dst, incoming } = inst else { continue };
        let (moved, kept): (Vec<_>, Vec<_>) = incoming.drain(..).partition(|(_, l)| group.contains(l));
        *incoming = kept;
        let value = if moved.len() == 1 {
            moved[0].0.clone()
        } else {
            let name = names.fresh(&format!("{dst}.{suffix}"));
            new_phis.push(Inst::Phi { dst: name.clone(), incoming: moved });
            Operand::Var(name)
        };
        incoming.push((value, via.to_string()));
    }
    new_phis
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_program, pretty_print, validate_ssa, Program};

    const NESTED_EXITS: &str = "fn f(c) {
P0:
  br c, P1, P2
P1:
  jmp H
P2:
  jmp H
H:
  x1 = phi [3, P1], [4, P2], [x2, L1], [x3, L2]
  d = input
  br d, A, X
A:
  e = input
  br e, L1, L2
L1:
  x2 = add x1, 1
  jmp H
L2:
  x3 = add x1, 2
  jmp H
X:
  ret x1
}
";

    #[test]
    fn two_entries_two_latches() {
        let p = parse_program(NESTED_EXITS).unwrap();
        let s = simplify_loops(&p.functions[0]).unwrap();
        let cfg = Cfg::build(&s);
        let dom = DomInfo::compute(&cfg);
        let loops = natural_loops(&cfg, &dom, "f").unwrap();
        assert_eq!(loops.len(), 1);
        assert_eq!(loops[0].latches.len(), 1);
        assert!(loops[0].preheader.is_some());
        let h = s.block("H").unwrap();
        let Inst::Phi { incoming, .. } = &h.insts[0] else { panic!() };
        assert_eq!(incoming.len(), 2);
        let ph = s.block("H.preheader").unwrap();
        assert!(matches!(&ph.insts[0], Inst::Phi { incoming, .. } if incoming.len() == 2));
        let lt = s.block("H.latch").unwrap();
        assert!(matches!(&lt.insts[0], Inst::Phi { incoming, .. } if incoming.len() == 2));
        assert!(validate_ssa(&Program::new(vec![s.clone()])).is_empty(), "{}", pretty_print(&Program::new(vec![s])));
    }

    #[test]
    fn simple_loop_is_unchanged() {
        let src = "fn f() {\nB1: x1 = input\njmp B2\nB2: x2 = phi [x1, B1], [x3, B2]\nx3 = input\nc = input\nbr c, B2, B3\nB3: ret\n}";
        let p = parse_program(src).unwrap();
        let s = simplify_loops(&p.functions[0]).unwrap();
        assert_eq!(s, p.functions[0]);
        assert_eq!(simplify_loops(&s).unwrap(), s);
    }
}
