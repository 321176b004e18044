//! Block knowledge and knowledge frontiers.

use std::collections::{BTreeMap, BTreeSet};

use crate::cfg::Cfg;
use crate::knowledge::KnowledgeMap;

/// Per-block variable sets: what is known once the block has executed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BlockKnowledge {
    sets: Vec<BTreeSet<String>>,
}

impl BlockKnowledge {
    pub fn from_sets(sets: Vec<BTreeSet<String>>) -> Self {
        BlockKnowledge { sets }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn get(&self, b: usize) -> &BTreeSet<String> {
        &self.sets[b]
    }

    pub fn knows(&self, b: usize, v: &str) -> bool {
        self.sets[b].contains(v)
    }

    pub fn insert(&mut self, b: usize, v: impl Into<String>) -> bool {
        self.sets[b].insert(v.into())
    }

    pub fn sets(&self) -> &[BTreeSet<String>] {
        &self.sets
    }

    /// Variables known in at least one block.
    pub fn known_anywhere(&self) -> BTreeSet<&str> {
        self.sets.iter().flatten().map(String::as_str).collect()
    }
}

/// Intersection of the out-edge sets of every block (`ret` blocks use their
/// edge to the virtual exit).
pub fn block_knowledge(km: &KnowledgeMap, cfg: &Cfg) -> BlockKnowledge {
    let sets = (0..cfg.len())
        .map(|b| {
            let mut outs = cfg.out_edges[b].iter();
            let Some(&first) = outs.next() else { return BTreeSet::new() };
            let mut acc = km.get(first).clone();
            for &e in outs {
                acc.retain(|v| km.knows(e, v));
            }
            acc
        })
        .collect();
    BlockKnowledge { sets }
}

/// The blocks knowing `x` that some path from the entry reaches without
/// passing through another block knowing `x`.
pub fn compute_frontier(kb: &BlockKnowledge, x: &str, cfg: &Cfg) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    if cfg.is_empty() {
        return out;
    }
    let mut seen = vec![false; cfg.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(b) = stack.pop() {
        if kb.knows(b, x) {
            out.insert(b);
            continue;
        }
        for &s in &cfg.succs[b] {
            if !seen[s] {
                seen[s] = true;
                stack.push(s);
            }
        }
    }
    out
}

/// Frontier of every variable of interest. Variables never known in any
/// block map to the empty set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Frontier {
    map: BTreeMap<String, BTreeSet<usize>>,
}

impl Frontier {
    pub fn get(&self, x: &str) -> Option<&BTreeSet<usize>> {
        self.map.get(x)
    }

    /// Frontier of `x`, empty when `x` is not tracked.
    pub fn of(&self, x: &str) -> BTreeSet<usize> {
        self.map.get(x).cloned().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<usize>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn insert(&mut self, x: impl Into<String>, blocks: BTreeSet<usize>) {
        self.map.insert(x.into(), blocks);
    }

    /// Frontier blocks as labels.
    pub fn labels(&self, cfg: &Cfg) -> BTreeMap<String, Vec<String>> {
        self.map.iter().map(|(x, bs)| (x.clone(), bs.iter().map(|&b| cfg.labels[b].clone()).collect())).collect()
    }
}

/// Frontiers for each of `vars`.
pub fn compute_frontiers<'a>(kb: &BlockKnowledge, cfg: &Cfg, vars: impl IntoIterator<Item = &'a str>) -> Frontier {
    let mut fr = Frontier::default();
    for x in vars {
        fr.insert(x, compute_frontier(kb, x, cfg));
    }
    fr
}

/// Variables whose frontier is exactly the entry block.
pub fn full_declassification(frontiers: &Frontier) -> BTreeSet<String> {
    frontiers.iter().filter(|(_, bs)| bs.len() == 1 && bs.contains(&0)).map(|(x, _)| x.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;
    use crate::knowledge::analyze_function;

    fn kb_of(src: &str) -> (Cfg, BlockKnowledge) {
        let p = parse_program(src).unwrap();
        let f = &p.functions[0];
        let cfg = Cfg::build(f);
        let km = analyze_function(f, &BTreeMap::new()).unwrap();
        let kb = block_knowledge(&km, &cfg);
        (cfg, kb)
    }

    #[test]
    fn transmit_at_entry_is_fully_declassified() {
        let (cfg, kb) = kb_of("fn f(x) {\nB1: transmit x\nc = input\nbr c, B2, B3\nB2: jmp B3\nB3: ret\n}");
        let fr = compute_frontiers(&kb, &cfg, ["x"]);
        assert_eq!(fr.of("x"), BTreeSet::from([0]));
        assert_eq!(full_declassification(&fr), BTreeSet::from(["x".to_string()]));
    }

    #[test]
    fn one_sided_transmit_stays_in_its_block() {
        let (cfg, kb) = kb_of("fn f(x, c) {\nB1: br c, B2, B3\nB2: transmit x\njmp B3\nB3: ret\n}");
        assert_eq!(compute_frontier(&kb, "x", &cfg), BTreeSet::from([1]));
    }

    #[test]
    fn unknown_variable_has_empty_frontier() {
        let (cfg, kb) = kb_of("fn f(x) {\nB1: ret\n}");
        assert!(compute_frontier(&kb, "x", &cfg).is_empty());
        assert!(kb.get(0).is_empty());
    }
}
