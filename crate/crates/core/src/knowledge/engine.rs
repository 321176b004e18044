use std::collections::{BTreeMap, VecDeque};

use fixedbitset::FixedBitSet;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::KnowledgeMap;
use crate::cfg::{Cfg, DomInfo, EdgeId, Node};
use crate::ir::{DefSite, Equation, Function, Inst, Operand};

struct Eqn {
    out: usize,
    /// `None` for literal operands.
    inputs: Vec<Option<usize>>,
    forward: bool,
    backward: Vec<usize>,
}

struct PhiRule {
    out: usize,
    inputs: Vec<(Option<usize>, EdgeId)>,
}

struct Rules {
    vars: Vec<String>,
    eqs: Vec<Eqn>,
    phis: Vec<Vec<PhiRule>>,
    /// Variables R5 may move from the out-edges of a block to its in-edges.
    liftable: Vec<FixedBitSet>,
}

fn build_rules(f: &Function, cfg: &Cfg) -> Rules {
    let dom = DomInfo::compute(cfg);
    let defs = f.defs();
    let vars: Vec<String> = defs.keys().map(|s| s.to_string()).collect();
    let idx: BTreeMap<&str, usize> = vars.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let op = |o: &Operand| o.as_var().and_then(|v| idx.get(v).copied());
    let n = vars.len();

    let mut eqs = Vec::new();
    let mut phis: Vec<Vec<PhiRule>> = (0..f.blocks.len()).map(|_| Vec::new()).collect();
    for (b, block) in f.blocks.iter().enumerate() {
        for inst in &block.insts {
            if let Inst::Phi { dst, incoming } = inst {
                let inputs = incoming
                    .iter()
                    .filter_map(|(v, l)| {
                        let p = f.block_index(l)?;
                        let e = cfg.in_edges[b].iter().copied().find(|&e| cfg.edges[e].from == Node::Block(p))?;
                        Some((op(v), e))
                    })
                    .collect();
                phis[b].push(PhiRule { out: idx[dst.as_str()], inputs });
                continue;
            }
            if let Some(eq) = Equation::of(inst) {
                let out = idx[eq.output];
                let inputs: Vec<Option<usize>> = eq.inputs.iter().map(|o| op(o)).collect();
                let backward = eq.solvable_positions();
                eqs.push(Eqn { out, inputs, forward: eq.class.forward, backward });
            }
        }
    }

    let mut liftable = vec![FixedBitSet::with_capacity(n); f.blocks.len()];
    for (b, set) in liftable.iter_mut().enumerate() {
        for (i, v) in vars.iter().enumerate() {
            let ok = match defs[v.as_str()] {
                DefSite::Param(_) => true,
                DefSite::Inst { block, .. } => dom.strictly_dom(block, b),
            };
            set.set(i, ok);
        }
    }
    Rules { vars, eqs, phis, liftable }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Task {
    Edge(EdgeId),
    Block(usize),
}

struct Solver<'a> {
    cfg: &'a Cfg,
    rules: &'a Rules,
    k: Vec<FixedBitSet>,
    queue: VecDeque<Task>,
    queued_edges: FixedBitSet,
    queued_blocks: FixedBitSet,
    rng: Option<StdRng>,
}

impl Solver<'_> {
    fn push(&mut self, t: Task) {
        let fresh = match t {
            Task::Edge(e) => !self.queued_edges.put(e),
            Task::Block(b) => !self.queued_blocks.put(b),
        };
        if fresh {
            self.queue.push_back(t);
        }
    }

    fn pop(&mut self) -> Option<Task> {
        let t = match &mut self.rng {
            Some(rng) if !self.queue.is_empty() => {
                let i = rng.random_range(0..self.queue.len());
                self.queue.swap_remove_back(i)
            }
            _ => self.queue.pop_front(),
        }?;
        match t {
            Task::Edge(e) => self.queued_edges.set(e, false),
            Task::Block(b) => self.queued_blocks.set(b, false),
        }
        Some(t)
    }

    fn changed(&mut self, e: EdgeId) {
        self.push(Task::Edge(e));
        let edge = self.cfg.edges[e];
        if let Node::Block(b) = edge.from {
            self.push(Task::Block(b));
        }
        if let Node::Block(b) = edge.to {
            self.push(Task::Block(b));
        }
    }

    fn known(set: &FixedBitSet, v: Option<usize>) -> bool {
        v.is_none_or(|v| set.contains(v))
    }

    /// R2 and R3 on one edge, to a local fixpoint.
    fn run_edge(&mut self, e: EdgeId) {
        let before = self.k[e].count_ones(..);
        let set = &mut self.k[e];
        loop {
            let mut grew = false;
            for eq in &self.rules.eqs {
                if eq.forward && !set.contains(eq.out) && eq.inputs.iter().all(|&v| Self::known(set, v)) {
                    set.insert(eq.out);
                    grew = true;
                }
                if set.contains(eq.out) {
                    for &j in &eq.backward {
                        let target = eq.inputs[j].unwrap();
                        if set.contains(target) {
                            continue;
                        }
                        if eq.inputs.iter().enumerate().all(|(i, &v)| i == j || Self::known(set, v)) {
                            set.insert(target);
                            grew = true;
                        }
                    }
                }
            }
            // φ forward on the same edge: all inputs known here.
            for rules in &self.rules.phis {
                for phi in rules {
                    if !set.contains(phi.out) && phi.inputs.iter().all(|&(v, _)| Self::known(set, v)) {
                        set.insert(phi.out);
                        grew = true;
                    }
                }
            }
            if !grew {
                break;
            }
        }
        if self.k[e].count_ones(..) != before {
            self.changed(e);
        }
    }

    fn add(&mut self, e: EdgeId, bits: &FixedBitSet) {
        let before = self.k[e].count_ones(..);
        self.k[e].union_with(bits);
        if self.k[e].count_ones(..) != before {
            self.changed(e);
        }
    }

    fn intersection(&self, edges: &[EdgeId]) -> FixedBitSet {
        let mut it = edges.iter();
        let Some(&first) = it.next() else {
            return FixedBitSet::with_capacity(self.rules.vars.len());
        };
        let mut acc = self.k[first].clone();
        for &e in it {
            acc.intersect_with(&self.k[e]);
        }
        acc
    }

    /// R4 to R7 around one block.
    fn run_block(&mut self, b: usize) {
        let cfg = self.cfg;
        let ins = &cfg.in_edges[b];
        let outs = &cfg.out_edges[b];
        // R4
        if !ins.is_empty() {
            let common = self.intersection(ins);
            for &o in outs {
                self.add(o, &common);
            }
        }
        // R6
        let mut from_phis = FixedBitSet::with_capacity(self.rules.vars.len());
        for phi in &self.rules.phis[b] {
            if phi.inputs.iter().all(|&(v, e)| Self::known(&self.k[e], v)) {
                from_phis.insert(phi.out);
            }
        }
        if !from_phis.is_clear() {
            for &o in outs {
                self.add(o, &from_phis);
            }
        }
        let on_out = self.intersection(outs);
        // R5
        let mut lift = on_out.clone();
        lift.intersect_with(&self.rules.liftable[b]);
        if !lift.is_clear() {
            for &i in ins {
                self.add(i, &lift);
            }
        }
        // R7
        for phi in &self.rules.phis[b] {
            if on_out.contains(phi.out) {
                for &(v, e) in &phi.inputs {
                    if let Some(v) = v {
                        if !self.k[e].contains(v) {
                            self.k[e].insert(v);
                            self.changed(e);
                        }
                    }
                }
            }
        }
    }
}

/// Least fixpoint of the propagation rules starting from `km`.
pub fn propagate(km: KnowledgeMap, f: &Function) -> KnowledgeMap {
    solve(km, f, None)
}

/// Same fixpoint, with tasks processed in a random order drawn from `seed`.
pub fn propagate_seeded(km: KnowledgeMap, f: &Function, seed: u64) -> KnowledgeMap {
    solve(km, f, Some(seed))
}

fn solve(km: KnowledgeMap, f: &Function, seed: Option<u64>) -> KnowledgeMap {
    let cfg = Cfg::build(f);
    let rules = build_rules(f, &cfg);
    let idx: BTreeMap<&str, usize> = rules.vars.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let n = rules.vars.len();
    let mut k = vec![FixedBitSet::with_capacity(n); cfg.edges.len()];
    // Names without a definition in `f` pass through untouched.
    let mut foreign: Vec<Vec<String>> = vec![Vec::new(); cfg.edges.len()];
    for (e, set) in km.sets().iter().enumerate().take(cfg.edges.len()) {
        for v in set {
            match idx.get(v.as_str()) {
                Some(&i) => k[e].insert(i),
                None => foreign[e].push(v.clone()),
            }
        }
    }
    let mut s = Solver {
        cfg: &cfg,
        rules: &rules,
        k,
        queue: VecDeque::new(),
        queued_edges: FixedBitSet::with_capacity(cfg.edges.len()),
        queued_blocks: FixedBitSet::with_capacity(f.blocks.len()),
        rng: seed.map(StdRng::seed_from_u64),
    };
    for e in 0..cfg.edges.len() {
        s.push(Task::Edge(e));
    }
    for b in 0..f.blocks.len() {
        s.push(Task::Block(b));
    }
    while let Some(t) = s.pop() {
        match t {
            Task::Edge(e) => s.run_edge(e),
            Task::Block(b) => s.run_block(b),
        }
    }
    let sets =
        s.k.iter()
            .zip(foreign)
            .map(|(bits, extra)| bits.ones().map(|i| rules.vars[i].clone()).chain(extra).collect())
            .collect();
    KnowledgeMap::from_sets(sets)
}
