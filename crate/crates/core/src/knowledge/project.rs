use std::collections::{BTreeMap, BTreeSet};

use super::KnowledgeMap;
use crate::cfg::{Cfg, DomInfo, EdgeOrigin, ExpandedFunction, Node};
use crate::ir::{DefSite, Function};

/// Maps knowledge on the expanded CFG back to the edges of `ef.base`.
///
/// On each expanded copy of an edge, the copy of `v` standing for `v` there
/// is the one defined nearest up the dominator chain; if no copy dominates
/// the edge, all copies must be known. `v` is known on the original edge
/// when it is known on every copy of that edge.
pub fn project_to_original(km: &KnowledgeMap, ef: &ExpandedFunction) -> KnowledgeMap {
    let ecfg = Cfg::build(&ef.function);
    let edom = DomInfo::compute(&ecfg);
    let bcfg = Cfg::build(&ef.base);
    let edefs = ef.function.defs();

    // base variable -> (expanded copy, defining block or None for params, index)
    type Copy<'a> = (&'a str, Option<usize>, usize);
    let mut copies: BTreeMap<&str, Vec<Copy>> = BTreeMap::new();
    for (v, site) in &edefs {
        let (block, index) = match *site {
            DefSite::Param(_) => (None, 0),
            DefSite::Inst { block, index } => (Some(block), index),
        };
        copies.entry(ef.original_var(v)).or_default().push((v, block, index));
    }

    let mut by_origin: Vec<Vec<usize>> = vec![Vec::new(); bcfg.edges.len()];
    for (e, o) in ef.edge_origin.iter().enumerate() {
        if let EdgeOrigin::Original(b) = *o {
            by_origin[b].push(e);
        }
    }

    let mut out = KnowledgeMap::new(bcfg.edges.len());
    for (eo, expanded) in by_origin.iter().enumerate() {
        if expanded.is_empty() {
            continue;
        }
        for (v, cs) in &copies {
            let known = expanded.iter().all(|&e| {
                let from = match ecfg.edges[e].from {
                    Node::Block(b) => Some(b),
                    _ => None,
                };
                let rep = cs
                    .iter()
                    .filter(|(_, d, _)| match (d, from) {
                        (None, _) => true,
                        (Some(d), Some(b)) => edom.dom(*d, b),
                        (Some(_), None) => false,
                    })
                    .max_by_key(|(_, d, i)| (d.map_or(0, |d| edom.depth(d) + 1), *i));
                match rep {
                    Some((c, _, _)) => km.knows(e, c),
                    None => cs.iter().all(|(c, _, _)| km.knows(e, c)),
                }
            });
            if known {
                out.insert(eo, *v);
            }
        }
    }
    out
}

/// Variables known on an edge although no execution through the edge
/// defines them.
pub fn vacuous_vars(f: &Function, km: &KnowledgeMap) -> Vec<BTreeSet<String>> {
    let cfg = Cfg::build(f);
    let n = cfg.len();
    let reach: Vec<Vec<bool>> = (0..n)
        .map(|b| {
            let mut seen = vec![false; n];
            let mut stack = vec![b];
            seen[b] = true;
            while let Some(x) = stack.pop() {
                for &s in &cfg.succs[x] {
                    if !seen[s] {
                        seen[s] = true;
                        stack.push(s);
                    }
                }
            }
            seen
        })
        .collect();
    let defs = f.defs();
    (0..cfg.edges.len())
        .map(|e| {
            let edge = cfg.edges[e];
            km.get(e)
                .iter()
                .filter(|v| {
                    let Some(DefSite::Inst { block: d, .. }) = defs.get(v.as_str()).copied() else { return false };
                    let before = matches!(edge.from, Node::Block(a) if reach[d][a]);
                    let after = matches!(edge.to, Node::Block(t) if reach[t][d]);
                    !before && !after
                })
                .cloned()
                .collect()
        })
        .collect()
}
