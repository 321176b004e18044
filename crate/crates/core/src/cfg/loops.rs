use std::collections::BTreeSet;

use super::{Cfg, CfgError, DomInfo};

/// A natural loop; back edges sharing a header are merged into one loop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NaturalLoop {
    pub header: usize,
    pub latches: Vec<usize>,
    pub body: BTreeSet<usize>,
    /// Blocks in the loop with a successor outside it.
    pub exiting: Vec<usize>,
    /// Blocks outside the loop reached from an exiting block.
    pub exits: Vec<usize>,
    /// `(exiting, exit)` pairs in block/successor order.
    pub exit_edges: Vec<(usize, usize)>,
    pub preheader: Option<usize>,
    /// Index of the innermost enclosing loop in the returned list.
    pub parent: Option<usize>,
    /// 1 for outermost loops.
    pub depth: usize,
}

impl NaturalLoop {
    pub fn contains(&self, b: usize) -> bool {
        self.body.contains(&b)
    }

    /// Predecessors of the header that are not in the loop.
    pub fn outside_preds(&self, cfg: &Cfg) -> Vec<usize> {
        cfg.preds[self.header].iter().copied().filter(|p| !self.body.contains(p)).collect()
    }
}

/// Finds all natural loops, outermost first.
pub fn natural_loops(cfg: &Cfg, dom: &DomInfo, function: &str) -> Result<Vec<NaturalLoop>, CfgError> {
    let n = cfg.len();
    if n == 0 {
        return Ok(vec![]);
    }
    // Any retreating DFS edge that is not a back edge makes the graph irreducible.
    let mut on_stack = vec![false; n];
    let mut seen = vec![false; n];
    let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
    seen[0] = true;
    on_stack[0] = true;
    let mut back_edges = Vec::new();
    while let Some(top) = stack.last_mut() {
        let b = top.0;
        if top.1 < cfg.succs[b].len() {
            let s = cfg.succs[b][top.1];
            top.1 += 1;
            if on_stack[s] {
                if !dom.dom(s, b) {
                    return Err(CfgError::Irreducible {
                        function: function.to_string(),
                        from: cfg.labels[b].clone(),
                        to: cfg.labels[s].clone(),
                    });
                }
                back_edges.push((b, s));
            } else if !seen[s] {
                seen[s] = true;
                on_stack[s] = true;
                stack.push((s, 0));
            }
        } else {
            on_stack[b] = false;
            stack.pop();
        }
    }
    let headers: BTreeSet<usize> = back_edges.iter().map(|&(_, h)| h).collect();
    let mut loops = Vec::new();
    for h in headers {
        let mut latches: Vec<usize> = back_edges.iter().filter(|e| e.1 == h).map(|e| e.0).collect();
        latches.sort_unstable();
        latches.dedup();
        let mut body = BTreeSet::from([h]);
        let mut work: Vec<usize> = latches.clone();
        while let Some(b) = work.pop() {
            if body.insert(b) {
                work.extend(cfg.preds[b].iter().copied().filter(|&p| cfg.reachable[p]));
            }
        }
        let mut exiting = Vec::new();
        let mut exits = Vec::new();
        let mut exit_edges = Vec::new();
        for &b in &body {
            for &s in &cfg.succs[b] {
                if !body.contains(&s) {
                    exit_edges.push((b, s));
                    if !exiting.contains(&b) {
                        exiting.push(b);
                    }
                    if !exits.contains(&s) {
                        exits.push(s);
                    }
                }
            }
        }
        let outside: Vec<usize> = cfg.preds[h].iter().copied().filter(|p| !body.contains(p)).collect();
        let preheader = match outside.as_slice() {
            [p] if cfg.succs[*p].len() == 1 => Some(*p),
            _ => None,
        };
        loops.push(NaturalLoop {
            header: h,
            latches,
            body,
            exiting,
            exits,
            exit_edges,
            preheader,
            parent: None,
            depth: 1,
        });
    }
    loops.sort_by(|a, b| b.body.len().cmp(&a.body.len()).then(a.header.cmp(&b.header)));
    for i in 0..loops.len() {
        let parent = (0..i)
            .filter(|&j| loops[j].body.contains(&loops[i].header) && loops[j].body.len() > loops[i].body.len())
            .min_by_key(|&j| loops[j].body.len());
        loops[i].parent = parent;
        loops[i].depth = parent.map_or(1, |p| loops[p].depth + 1);
    }
    Ok(loops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_unchecked;

    fn loops_of(src: &str) -> Result<Vec<NaturalLoop>, CfgError> {
        let p = parse_unchecked(src).unwrap();
        let cfg = Cfg::build(&p.functions[0]);
        let dom = DomInfo::compute(&cfg);
        natural_loops(&cfg, &dom, "f")
    }

    #[test]
    fn self_loop() {
        let l = loops_of("fn f() {\nB1: x1 = input\njmp B2\nB2: x2 = phi [x1, B1], [x3, B2]\nx3 = input\nc = input\nbr c, B2, B3\nB3: ret\n}").unwrap();
        assert_eq!(l.len(), 1);
        assert_eq!(l[0].header, 1);
        assert_eq!(l[0].latches, vec![1]);
        assert_eq!(l[0].body, BTreeSet::from([1]));
        assert_eq!(l[0].preheader, Some(0));
        assert_eq!(l[0].exit_edges, vec![(1, 2)]);
    }

    #[test]
    fn acyclic_has_none() {
        assert!(loops_of("fn f(c) {\nA: br c, B, C\nB: jmp C\nC: ret\n}").unwrap().is_empty());
    }

    #[test]
    fn irreducible_detected() {
        let err = loops_of("fn f(c) {\nA: br c, B, C\nB: br c, C, D\nC: br c, B, D\nD: ret\n}").unwrap_err();
        assert!(matches!(err, CfgError::Irreducible { .. }));
    }

    #[test]
    fn nesting_depths() {
        let src = "fn f(c) {\nA: jmp H1\nH1: br c, H2, X\nH2: br c, B, L1\nB: jmp H2\nL1: jmp H1\nX: ret\n}";
        let l = loops_of(src).unwrap();
        assert_eq!(l.len(), 2);
        assert_eq!(l[0].header, 1);
        assert_eq!(l[0].depth, 1);
        assert_eq!(l[1].header, 2);
        assert_eq!(l[1].parent, Some(0));
        assert_eq!(l[1].depth, 2);
    }
}
