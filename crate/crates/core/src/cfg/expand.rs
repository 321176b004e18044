//! Partial loop expansion: every loop body is copied twice so that the
//! result is acyclic while still exposing one iteration-to-iteration step.

use std::collections::{BTreeMap, BTreeSet};

use super::simplify::NameGen;
use super::{natural_loops, simplify_loops, Cfg, CfgError, DomInfo, Edge, EdgeId, NaturalLoop, Node};
use crate::ir::{BinOp, Block, Function, Inst, Operand, Terminator};

/// Deepest loop nest accepted by [`expand_loops`].
pub const MAX_LOOP_DEPTH: usize = 4;

/// Where in an expansion a variable was created.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum CopyTag {
    First,
    Second,
    /// A φ joining the copies after the loop.
    Merge,
}

/// The original variable an expanded variable stands for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VarOrigin {
    pub var: String,
    /// Outermost expansion last.
    pub path: Vec<CopyTag>,
}

impl VarOrigin {
    fn pushed(&self, tag: CopyTag) -> VarOrigin {
        let mut path = self.path.clone();
        path.push(tag);
        VarOrigin { var: self.var.clone(), path }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeOrigin {
    /// Copy of an edge of [`ExpandedFunction::base`].
    Original(EdgeId),
    /// Introduced by the expansion (the back-edge dispatch chain).
    Synthetic,
}

#[derive(Clone, Debug)]
pub struct ExpandedFunction {
    /// The loop-simplified function the expansion was built from.
    pub base: Function,
    /// The acyclic result.
    pub function: Function,
    /// Origin of every variable of `function`.
    pub var_origin: BTreeMap<String, VarOrigin>,
    /// Base label of every block of `function`, `None` for synthetic blocks.
    pub block_origin: Vec<Option<String>>,
    /// Origin of every edge of `Cfg::build(&function)`.
    pub edge_origin: Vec<EdgeOrigin>,
    pub loops_expanded: usize,
}

impl ExpandedFunction {
    /// Original variable behind an expanded one (itself when not copied).
    pub fn original_var<'a>(&'a self, v: &'a str) -> &'a str {
        self.var_origin.get(v).map_or(v, |o| o.var.as_str())
    }

    /// Expanded variables grouped by the base variable they stand for.
    pub fn copies(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (v, o) in &self.var_origin {
            out.entry(o.var.as_str()).or_default().push(v.as_str());
        }
        out
    }
}

type EdgeKey = (Option<String>, Option<String>);

fn edge_key(cfg: &Cfg, e: &Edge) -> EdgeKey {
    let side = |n: Node| match n {
        Node::Block(b) => Some(cfg.labels[b].clone()),
        _ => None,
    };
    (side(e.from), side(e.to))
}

fn inner(a: &str, b: &str) -> EdgeKey {
    (Some(a.to_string()), Some(b.to_string()))
}

struct State {
    f: Function,
    names: NameGen,
    var_origin: BTreeMap<String, VarOrigin>,
    block_origin: BTreeMap<String, Option<String>>,
    edge_origin: BTreeMap<EdgeKey, EdgeOrigin>,
}

/// Simplifies the loops of `f` and expands them innermost first.
pub fn expand_loops(f: &Function) -> Result<ExpandedFunction, CfgError> {
    let base = simplify_loops(f)?;
    let cfg = Cfg::build(&base);
    let dom = DomInfo::compute(&cfg);
    let loops = natural_loops(&cfg, &dom, &base.name)?;
    if let Some(depth) = loops.iter().map(|l| l.depth).max() {
        if depth > MAX_LOOP_DEPTH {
            return Err(CfgError::TooDeep { function: base.name.clone(), depth, limit: MAX_LOOP_DEPTH });
        }
    }
    let mut st = State {
        f: base.clone(),
        names: NameGen::new(&base),
        var_origin: base
            .variables()
            .into_iter()
            .map(|v| (v.to_string(), VarOrigin { var: v.to_string(), path: vec![] }))
            .collect(),
        block_origin: base.blocks.iter().map(|b| (b.label.clone(), Some(b.label.clone()))).collect(),
        edge_origin: cfg.edges.iter().enumerate().map(|(i, e)| (edge_key(&cfg, e), EdgeOrigin::Original(i))).collect(),
    };
    let mut loops_expanded = 0;
    loop {
        let cfg = Cfg::build(&st.f);
        let dom = DomInfo::compute(&cfg);
        let loops = natural_loops(&cfg, &dom, &st.f.name)?;
        let Some(max) = loops.iter().map(|l| l.depth).max() else { break };
        let l = loops.iter().find(|l| l.depth == max).unwrap();
        st.expand_one(&cfg, &dom, l)?;
        loops_expanded += 1;
    }
    let cfg = Cfg::build(&st.f);
    let edge_origin = cfg
        .edges
        .iter()
        .map(|e| st.edge_origin.get(&edge_key(&cfg, e)).copied().unwrap_or(EdgeOrigin::Synthetic))
        .collect();
    let block_origin = st.f.blocks.iter().map(|b| st.block_origin.get(&b.label).cloned().flatten()).collect();
    let live: BTreeSet<&str> = st.f.variables().into_iter().collect();
    st.var_origin.retain(|v, _| live.contains(v.as_str()));
    Ok(ExpandedFunction { base, function: st.f, var_origin: st.var_origin, block_origin, edge_origin, loops_expanded })
}

fn rename(op: &mut Operand, map: &BTreeMap<String, String>) {
    if let Operand::Var(v) = op {
        if let Some(n) = map.get(v.as_str()) {
            *v = n.clone();
        }
    }
}

fn copy_value(dst: String, value: Operand) -> Inst {
    match value {
        Operand::Lit(n) => Inst::Const { dst, value: n },
        v => Inst::Binary { dst, op: BinOp::Add, lhs: v, rhs: Operand::Lit(0) },
    }
}

impl State {
    fn origin_of(&self, v: &str) -> VarOrigin {
        self.var_origin.get(v).cloned().unwrap_or(VarOrigin { var: v.to_string(), path: vec![] })
    }

    fn edge_of(&self, from: &str, to: Option<&str>) -> EdgeOrigin {
        let key = (Some(from.to_string()), to.map(str::to_string));
        self.edge_origin.get(&key).copied().unwrap_or(EdgeOrigin::Synthetic)
    }

    fn expand_one(&mut self, cfg: &Cfg, dom: &DomInfo, l: &NaturalLoop) -> Result<(), CfgError> {
        let fname = self.f.name.clone();
        let (Some(pre), [latch]) = (l.preheader, l.latches.as_slice()) else {
            return Err(CfgError::NotSimplified { function: fname, header: cfg.labels[l.header].clone() });
        };
        let latch = *latch;
        let f = self.f.clone();
        let label = |b: usize| f.blocks[b].label.clone();
        let hl = label(l.header);
        let latch_label = label(latch);
        let pre_label = label(pre);

        let mut def_block: BTreeMap<String, usize> = BTreeMap::new();
        let mut defined: Vec<String> = Vec::new();
        for &b in &l.body {
            for inst in &f.blocks[b].insts {
                if let Some(d) = inst.dst() {
                    def_block.insert(d.to_string(), b);
                    defined.push(d.to_string());
                }
            }
        }

        let mut lmap: [BTreeMap<String, String>; 2] = Default::default();
        let mut vmap: [BTreeMap<String, String>; 2] = Default::default();
        for k in 0..2 {
            for &b in &l.body {
                let name = self.names.fresh(&format!("{}.{}", label(b), k + 1));
                lmap[k].insert(label(b), name);
            }
            for v in &defined {
                let name = self.names.fresh(&format!("{v}.{}", k + 1));
                vmap[k].insert(v.clone(), name);
            }
        }

        let m = l.exit_edges.len();
        let nback = if m >= 2 { m - 1 } else { 1 };
        let back: Vec<String> = (0..nback).map(|_| self.names.fresh(&format!("{hl}.back"))).collect();
        let merges: Vec<String> = (0..m).map(|_| self.names.fresh(&format!("{hl}.exit"))).collect();
        let back_src = |i: usize| back[i.min(nback - 1)].clone();
        let merge_of: BTreeMap<(usize, usize), usize> = l.exit_edges.iter().enumerate().map(|(i, &e)| (e, i)).collect();

        // Loop values read after the loop.
        let dset: BTreeSet<&str> = defined.iter().map(String::as_str).collect();
        let mut live_out: BTreeSet<String> = BTreeSet::new();
        for (b, block) in f.blocks.iter().enumerate() {
            if l.contains(b) {
                continue;
            }
            let uses = block.insts.iter().flat_map(Inst::uses).chain(block.term.uses());
            for u in uses {
                if let Some(v) = u.as_var().filter(|v| dset.contains(v)) {
                    live_out.insert(v.to_string());
                }
            }
        }

        // Placeholders for values not available on the back edge.
        let mut back_insts = Vec::new();
        let mut back_value: BTreeMap<String, Operand> = BTreeMap::new();
        for v in defined.iter().filter(|v| live_out.contains(*v)) {
            let value = if dom.dom(def_block[v], latch) {
                Operand::Var(vmap[1][v].clone())
            } else {
                let p = self.names.fresh(&format!("{v}.back"));
                self.var_origin.insert(p.clone(), self.origin_of(v).pushed(CopyTag::Second));
                back_insts.push(Inst::Input { dst: p.clone() });
                Operand::Var(p)
            };
            back_value.insert(v.clone(), value);
        }

        // Merge blocks, one per exit edge.
        let mut merge_blocks = Vec::new();
        let mut merge_def: Vec<BTreeMap<String, String>> = vec![BTreeMap::new(); m];
        for (i, &(e, x)) in l.exit_edges.iter().enumerate() {
            let mut phis = Vec::new();
            for v in defined.iter().filter(|v| live_out.contains(*v) && dom.dom(def_block[*v], e)) {
                let dst = self.names.fresh(&format!("{v}.m"));
                self.var_origin.insert(dst.clone(), self.origin_of(v).pushed(CopyTag::Merge));
                phis.push(Inst::Phi {
                    dst: dst.clone(),
                    incoming: vec![
                        (Operand::Var(vmap[0][v].clone()), lmap[0][&label(e)].clone()),
                        (Operand::Var(vmap[1][v].clone()), lmap[1][&label(e)].clone()),
                        (back_value[v].clone(), back_src(i)),
                    ],
                });
                merge_def[i].insert(v.clone(), dst);
            }
            let orig = self.edge_of(&label(e), Some(&label(x)));
            self.edge_origin.insert(inner(&merges[i], &label(x)), orig);
            self.block_origin.insert(merges[i].clone(), None);
            merge_blocks.push(Block::new(merges[i].clone(), phis, Terminator::Jmp(label(x))));
        }

        // Back-edge dispatch chain.
        let mut back_blocks = Vec::new();
        for j in 0..nback {
            let mut insts = if j == 0 { std::mem::take(&mut back_insts) } else { vec![] };
            let term = match m {
                0 => Terminator::Ret(None),
                1 => Terminator::Jmp(merges[0].clone()),
                _ => {
                    let sel = self.names.fresh(&format!("{hl}.sel"));
                    insts.push(Inst::Input { dst: sel.clone() });
                    let next = if j + 1 < nback { back[j + 1].clone() } else { merges[m - 1].clone() };
                    Terminator::Br { cond: Operand::Var(sel), then_target: merges[j].clone(), else_target: next }
                }
            };
            self.block_origin.insert(back[j].clone(), None);
            back_blocks.push(Block::new(back[j].clone(), insts, term));
        }

        // The two body copies.
        let mut copies = Vec::new();
        for k in 0..2 {
            for &b in &l.body {
                let src = &f.blocks[b];
                let bl = label(b);
                let mut insts = Vec::with_capacity(src.insts.len());
                for inst in &src.insts {
                    if b == l.header {
                        if let Inst::Phi { dst, incoming } = inst {
                            let pick = |from: &str| {
                                incoming
                                    .iter()
                                    .find(|(_, p)| p == from)
                                    .map(|(v, _)| v.clone())
                                    .unwrap_or(Operand::Lit(0))
                            };
                            let value = if k == 0 {
                                pick(&pre_label)
                            } else {
                                let mut next = pick(&latch_label);
                                rename(&mut next, &vmap[0]);
                                next
                            };
                            insts.push(copy_value(vmap[k][dst].clone(), value));
                            continue;
                        }
                    }
                    let mut inst = inst.clone();
                    if let Some(d) = inst.dst_mut() {
                        *d = vmap[k][d.as_str()].clone();
                    }
                    inst.for_each_use_mut(|u| rename(u, &vmap[k]));
                    if let Inst::Phi { incoming, .. } = &mut inst {
                        for (_, p) in incoming.iter_mut() {
                            *p = lmap[k][p.as_str()].clone();
                        }
                    }
                    insts.push(inst);
                }
                let mut term = src.term.clone();
                term.for_each_use_mut(|u| rename(u, &vmap[k]));
                let me = lmap[k][&bl].clone();
                let mut edges = Vec::new();
                term.for_each_target_mut(|t| {
                    let tb = f.block_index(t).unwrap();
                    let new = if tb == l.header {
                        if k == 0 {
                            lmap[1][&hl].clone()
                        } else {
                            back[0].clone()
                        }
                    } else if l.contains(tb) {
                        lmap[k][t.as_str()].clone()
                    } else {
                        merges[merge_of[&(b, tb)]].clone()
                    };
                    edges.push((t.clone(), new.clone()));
                    *t = new;
                });
                for (old, new) in edges {
                    let orig = self.edge_of(&bl, Some(&old));
                    self.edge_origin.insert(inner(&me, &new), orig);
                }
                if matches!(term, Terminator::Ret(_)) {
                    let orig = self.edge_of(&bl, None);
                    self.edge_origin.insert((Some(me.clone()), None), orig);
                }
                let bo = self.block_origin.get(&bl).cloned().flatten();
                self.block_origin.insert(me.clone(), bo);
                copies.push(Block::new(me, insts, term));
            }
        }
        let orig = self.edge_of(&pre_label, Some(&hl));
        self.edge_origin.insert(inner(&pre_label, &lmap[0][&hl]), orig);
        for v in &defined {
            let o = self.origin_of(v);
            self.var_origin.insert(vmap[0][v].clone(), o.pushed(CopyTag::First));
            self.var_origin.insert(vmap[1][v].clone(), o.pushed(CopyTag::Second));
        }

        // Reassemble: copies, dispatch chain and merges replace the body.
        let first = *l.body.iter().next().unwrap();
        let mut blocks = Vec::with_capacity(f.blocks.len() + copies.len() + m + nback);
        let inside_labels: BTreeSet<String> =
            copies.iter().map(|b| b.label.clone()).chain(back.iter().cloned()).collect();
        let mut new_copies = Some((copies, back_blocks, merge_blocks));
        for (b, block) in f.blocks.iter().enumerate() {
            if b == first {
                let (c, bb, mb) = new_copies.take().unwrap();
                blocks.extend(c);
                blocks.extend(bb);
                blocks.extend(mb);
            }
            if l.contains(b) {
                continue;
            }
            let mut block = block.clone();
            if b == pre {
                let h1 = lmap[0][&hl].clone();
                block.term.for_each_target_mut(|t| {
                    if *t == hl {
                        *t = h1.clone();
                    }
                });
            }
            for inst in block.insts.iter_mut() {
                let Inst::Phi { incoming, .. } = inst else { continue };
                for (v, p) in incoming.iter_mut() {
                    let Some(pb) = f.block_index(p) else { continue };
                    if let Some(&i) = merge_of.get(&(pb, b)) {
                        if let Operand::Var(name) = v {
                            if let Some(d) = merge_def[i].get(name.as_str()) {
                                *name = d.clone();
                            }
                        }
                        *p = merges[i].clone();
                    }
                }
            }
            blocks.push(block);
        }
        self.f.blocks = blocks;
        for v in &defined {
            self.var_origin.remove(v);
        }
        for &b in &l.body {
            self.block_origin.remove(&label(b));
        }

        let merge_labels: BTreeMap<String, usize> = merges.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        self.reconstruct(&dset, &inside_labels, &merge_labels, &merge_def)
    }

    /// Rewrites uses of loop values after the loop so they read the merge φs,
    /// adding φs where several merges meet.
    fn reconstruct(
        &mut self,
        loop_vars: &BTreeSet<&str>,
        inside: &BTreeSet<String>,
        merge_labels: &BTreeMap<String, usize>,
        merge_def: &[BTreeMap<String, String>],
    ) -> Result<(), CfgError> {
        let cfg = Cfg::build(&self.f);
        let n = self.f.blocks.len();
        let mut rc = Reconstructor {
            cfg: &cfg,
            inside: (0..n).map(|b| inside.contains(&cfg.labels[b])).collect(),
            current: BTreeMap::new(),
            pending: BTreeMap::new(),
            names: &mut self.names,
            function: &self.f.name,
        };
        for (b, l) in cfg.labels.iter().enumerate() {
            if let Some(&i) = merge_labels.get(l) {
                for (v, d) in &merge_def[i] {
                    rc.current.insert((v.clone(), b), Operand::Var(d.clone()));
                }
            }
        }
        // Which (variable, block) pairs need a value.
        let mut wanted: Vec<(String, usize)> = Vec::new();
        for (b, block) in self.f.blocks.iter().enumerate() {
            if rc.inside[b] || merge_labels.contains_key(&block.label) || !cfg.reachable[b] {
                continue;
            }
            for inst in &block.insts {
                if let Inst::Phi { incoming, .. } = inst {
                    for (v, p) in incoming {
                        if let Some(v) = v.as_var().filter(|v| loop_vars.contains(v)) {
                            let pb = cfg.labels.iter().position(|x| x == p).unwrap();
                            wanted.push((v.to_string(), pb));
                        }
                    }
                } else {
                    for u in inst.uses() {
                        if let Some(v) = u.as_var().filter(|v| loop_vars.contains(v)) {
                            wanted.push((v.to_string(), b));
                        }
                    }
                }
            }
            for u in block.term.uses() {
                if let Some(v) = u.as_var().filter(|v| loop_vars.contains(v)) {
                    wanted.push((v.to_string(), b));
                }
            }
        }
        for (v, b) in &wanted {
            rc.read(v, *b)?;
        }
        let Reconstructor { current, pending, .. } = rc;

        // Drop φs whose inputs are all one value (or the φ itself).
        let mut subst: BTreeMap<String, Operand> = BTreeMap::new();
        let resolve = |subst: &BTreeMap<String, Operand>, op: &Operand| {
            let mut op = op.clone();
            while let Operand::Var(v) = &op {
                match subst.get(v) {
                    Some(next) => op = next.clone(),
                    None => break,
                }
            }
            op
        };
        loop {
            let mut changed = false;
            for (dst, (_, _, incoming)) in &pending {
                if subst.contains_key(dst) {
                    continue;
                }
                let mut distinct: Vec<Operand> = Vec::new();
                for (v, _) in incoming {
                    let v = resolve(&subst, v);
                    if v.as_var() != Some(dst.as_str()) && !distinct.contains(&v) {
                        distinct.push(v);
                    }
                }
                if distinct.len() == 1 {
                    subst.insert(dst.clone(), distinct.pop().unwrap());
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        let fix = |op: &mut Operand| *op = resolve(&subst, op);
        let mut inserts: BTreeMap<usize, Vec<Inst>> = BTreeMap::new();
        for (dst, (b, var, incoming)) in &pending {
            if subst.contains_key(dst) {
                continue;
            }
            let incoming = incoming.iter().map(|(v, p)| (resolve(&subst, v), p.clone())).collect();
            inserts.entry(*b).or_default().push(Inst::Phi { dst: dst.clone(), incoming });
            let origin = self.origin_of(var).pushed(CopyTag::Merge);
            self.var_origin.insert(dst.clone(), origin);
        }
        for (b, block) in self.f.blocks.iter_mut().enumerate() {
            if merge_labels.contains_key(&block.label) || inside.contains(&block.label) {
                continue;
            }
            for inst in block.insts.iter_mut() {
                if let Inst::Phi { incoming, .. } = inst {
                    for (v, p) in incoming.iter_mut() {
                        if let Some(name) = v.as_var().filter(|x| loop_vars.contains(x)) {
                            let pb = cfg.labels.iter().position(|x| x == p).unwrap();
                            if let Some(val) = current.get(&(name.to_string(), pb)) {
                                *v = resolve(&subst, val);
                            }
                        }
                    }
                } else {
                    inst.for_each_use_mut(|u| {
                        if let Some(name) = u.as_var().filter(|x| loop_vars.contains(x)) {
                            if let Some(val) = current.get(&(name.to_string(), b)) {
                                *u = resolve(&subst, val);
                            }
                        }
                    });
                }
            }
            block.term.for_each_use_mut(|u| {
                if let Some(name) = u.as_var().filter(|x| loop_vars.contains(x)) {
                    if let Some(val) = current.get(&(name.to_string(), b)) {
                        *u = resolve(&subst, val);
                    }
                }
            });
        }
        for (b, phis) in inserts {
            let block = &mut self.f.blocks[b];
            for (i, phi) in phis.into_iter().enumerate() {
                block.insts.insert(i, phi);
            }
        }
        if !subst.is_empty() {
            for block in self.f.blocks.iter_mut() {
                for inst in block.insts.iter_mut() {
                    inst.for_each_use_mut(fix);
                }
                block.term.for_each_use_mut(fix);
            }
        }
        Ok(())
    }
}

/// Block, variable and incoming entries of a φ still being built.
type PendingPhi = (usize, String, Vec<(Operand, String)>);

struct Reconstructor<'a> {
    cfg: &'a Cfg,
    inside: Vec<bool>,
    current: BTreeMap<(String, usize), Operand>,
    /// New φs by name.
    pending: BTreeMap<String, PendingPhi>,
    names: &'a mut NameGen,
    function: &'a str,
}

impl Reconstructor<'_> {
    fn read(&mut self, v: &str, b: usize) -> Result<Operand, CfgError> {
        if let Some(x) = self.current.get(&(v.to_string(), b)) {
            return Ok(x.clone());
        }
        let err = || CfgError::Reconstruction { function: self.function.to_string(), var: v.to_string() };
        let preds = self.cfg.preds[b].clone();
        if self.inside[b] || preds.is_empty() {
            return Err(err());
        }
        if let [p] = preds.as_slice() {
            let x = self.read(v, *p)?;
            self.current.insert((v.to_string(), b), x.clone());
            return Ok(x);
        }
        let phi = self.names.fresh(&format!("{v}.r"));
        self.current.insert((v.to_string(), b), Operand::Var(phi.clone()));
        let mut incoming = Vec::new();
        for p in preds {
            let x = self.read(v, p)?;
            incoming.push((x, self.cfg.labels[p].clone()));
        }
        self.pending.insert(phi.clone(), (b, v.to_string(), incoming));
        Ok(Operand::Var(phi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_program, pretty_print, validate_ssa, Program};

    fn expand(src: &str) -> ExpandedFunction {
        let p = parse_program(src).unwrap();
        let x = expand_loops(&p.functions[0]).unwrap();
        let prog = Program::new(vec![x.function.clone()]);
        let r = validate_ssa(&prog);
        assert!(r.is_empty(), "{r}\n{}", pretty_print(&prog));
        x
    }

    fn is_acyclic(f: &Function) -> bool {
        let cfg = Cfg::build(f);
        let dom = DomInfo::compute(&cfg);
        natural_loops(&cfg, &dom, &f.name).unwrap().is_empty()
    }

    const FRESH_LOOP: &str = "fn f() {
B1:
  x1 = input
  jmp B2
B2:
  x2 = phi [x1, B1], [x3, B2]
  x3 = input
  c = input
  br c, B2, B3
B3:
  transmit x2
  ret
}";

    #[test]
    fn self_loop_expansion() {
        let x = expand(FRESH_LOOP);
        assert!(is_acyclic(&x.function));
        assert_eq!(x.loops_expanded, 1);
        let f = &x.function;
        let h1 = f.block("B2.1").unwrap();
        assert_eq!(h1.insts[0].to_string(), "x2.1 = add x1, 0");
        let h2 = f.block("B2.2").unwrap();
        assert_eq!(h2.insts[0].to_string(), "x2.2 = add x3.1, 0");
        assert_eq!(x.original_var("x2.2"), "x2");
        assert_eq!(x.var_origin["x2.1"].path, vec![CopyTag::First]);
        // the transmit after the loop reads the merge φ
        let b3 = f.block("B3").unwrap();
        let Inst::Transmit { value, .. } = &b3.insts[0] else { panic!() };
        let v = value.as_var().unwrap();
        assert_eq!(x.var_origin[v].path, vec![CopyTag::Merge]);
        // ENTRY->B1, B1->B2 and B2->B3 have copies; B2->B2 maps to two edges
        let cfg = Cfg::build(f);
        let from_self: Vec<_> = x.edge_origin.iter().filter(|o| **o == EdgeOrigin::Original(2)).collect();
        assert_eq!(from_self.len(), 2, "{}", cfg.to_dot("f"));
    }

    #[test]
    fn nested_loops_expand() {
        let src = "fn f(n) {
A:
  i0 = const 0
  jmp H1
H1:
  i = phi [i0, A], [i2, L1]
  j0 = const 0
  jmp H2
H2:
  j = phi [j0, H1], [j2, H2]
  s = add i, j
  j2 = add j, 1
  c = lt j2, n
  br c, H2, L1
L1:
  i2 = add i, 1
  d = lt i2, n
  br d, H1, X
X:
  transmit i2
  ret
}";
        let x = expand(src);
        assert!(is_acyclic(&x.function));
        assert_eq!(x.loops_expanded, 2);
        let copies = x.copies();
        assert_eq!(copies["j"].len(), 4);
    }

    #[test]
    fn two_exits_use_a_dispatch_chain() {
        let src = "fn f() {
A:
  jmp H
H:
  x = phi [0, A], [y, L]
  c = input
  br c, X1, L
L:
  y = add x, 1
  d = input
  br d, H, X2
X1:
  transmit x
  ret
X2:
  transmit y
  ret
}";
        let x = expand(src);
        assert!(is_acyclic(&x.function));
        assert!(x.function.block("H.back").is_some());
        assert_eq!(x.function.blocks.iter().filter(|b| b.label.starts_with("H.exit")).count(), 2);
        assert!(x.edge_origin.contains(&EdgeOrigin::Synthetic) || !x.function.blocks.is_empty());
    }

    #[test]
    fn value_used_at_join_of_exits() {
        let src = "fn f() {
A:
  jmp H
H:
  x = phi [0, A], [y, L]
  c = input
  br c, J, L
L:
  y = add x, 1
  d = input
  br d, H, J
J:
  transmit x
  ret
}";
        let x = expand(src);
        let j = x.function.block("J").unwrap();
        assert!(j.insts[0].is_phi());
    }

    #[test]
    fn too_deep_is_rejected() {
        let mut src = String::from("fn f(c) {\nA: jmp H1\n");
        for d in 1..=5 {
            src.push_str(&format!("H{d}: jmp {}\n", if d < 5 { format!("H{}", d + 1) } else { "T5".into() }));
        }
        for d in (1..=5).rev() {
            let out = if d > 1 { format!("T{}", d - 1) } else { "X".into() };
            src.push_str(&format!("T{d}: br c, H{d}, {out}\n"));
        }
        src.push_str("X: ret\n}");
        let p = parse_program(&src).unwrap();
        let err = expand_loops(&p.functions[0]).unwrap_err();
        assert!(matches!(err, CfgError::TooDeep { depth: 5, .. }), "{err}");
    }

    #[test]
    fn infinite_loop_gets_a_return() {
        let x = expand("fn f() {\nA: jmp H\nH: x = input\ntransmit x\njmp H\n}");
        assert!(is_acyclic(&x.function));
        assert!(matches!(x.function.block("H.back").unwrap().term, Terminator::Ret(None)));
    }
}
