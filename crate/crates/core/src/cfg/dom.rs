use super::{reverse_postorder, Cfg, CfgError, Node};

/// Dominator and post-dominator trees with constant-time queries.
#[derive(Clone, Debug)]
pub struct DomInfo {
    idom: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    reachable: Vec<bool>,
    pre: Vec<usize>,
    post: Vec<usize>,
    // Post-dominance over blocks plus the virtual exit at index `n`.
    ipdom: Vec<Option<usize>>,
    ppre: Vec<usize>,
    ppost: Vec<usize>,
    reaches_exit: Vec<bool>,
}

/// Cooper/Harvey/Kennedy iterative immediate dominators. `preds` are the
/// predecessors in the graph being dominated.
fn immediate_dominators(succs: &[Vec<usize>], preds: &[Vec<usize>], root: usize) -> Vec<Option<usize>> {
    let n = succs.len();
    let rpo = reverse_postorder(succs, root);
    let mut order = vec![usize::MAX; n];
    for (i, &b) in rpo.iter().enumerate() {
        order[b] = i;
    }
    let mut idom: Vec<Option<usize>> = vec![None; n];
    idom[root] = Some(root);
    let intersect = |idom: &[Option<usize>], mut a: usize, mut b: usize| {
        while a != b {
            while order[a] > order[b] {
                a = idom[a].unwrap();
            }
            while order[b] > order[a] {
                b = idom[b].unwrap();
            }
        }
        a
    };
    let mut changed = true;
    while changed {
        changed = false;
        for &b in rpo.iter().skip(1) {
            let mut new = None;
            for &p in &preds[b] {
                if idom[p].is_none() {
                    continue;
                }
                new = Some(match new {
                    None => p,
                    Some(q) => intersect(&idom, p, q),
                });
            }
            if new.is_some() && idom[b] != new {
                idom[b] = new;
                changed = true;
            }
        }
    }
    idom[root] = None;
    idom
}

fn number_tree(children: &[Vec<usize>], root: usize, pre: &mut [usize], post: &mut [usize], depth: &mut [usize]) {
    let mut clock = 0;
    let mut stack = vec![(root, 0usize)];
    pre[root] = clock;
    clock += 1;
    while let Some(top) = stack.last_mut() {
        let (b, i) = *top;
        if i < children[b].len() {
            top.1 += 1;
            let c = children[b][i];
            depth[c] = depth[b] + 1;
            pre[c] = clock;
            clock += 1;
            stack.push((c, 0));
        } else {
            post[b] = clock;
            clock += 1;
            stack.pop();
        }
    }
}

impl DomInfo {
    /// Computes dominance for the reachable part of the graph.
    pub fn compute(cfg: &Cfg) -> DomInfo {
        let n = cfg.len();
        let idom = if n == 0 { vec![] } else { immediate_dominators(&cfg.succs, &cfg.preds, 0) };
        let mut children = vec![Vec::new(); n];
        for (b, d) in idom.iter().enumerate() {
            if let Some(d) = *d {
                children[d].push(b);
            }
        }
        let mut pre = vec![usize::MAX; n];
        let mut post = vec![usize::MAX; n];
        let mut depth = vec![0; n];
        if n > 0 {
            number_tree(&children, 0, &mut pre, &mut post, &mut depth);
        }

        // Reverse graph rooted at the virtual exit (index n).
        let mut rsuccs = vec![Vec::new(); n + 1];
        let mut rpreds = vec![Vec::new(); n + 1];
        for e in &cfg.edges {
            match (e.from, e.to) {
                (Node::Block(a), Node::Block(b)) => {
                    rsuccs[b].push(a);
                    rpreds[a].push(b);
                }
                (Node::Block(a), Node::Exit) => {
                    rsuccs[n].push(a);
                    rpreds[a].push(n);
                }
                _ => {}
            }
        }
        let ipdom = immediate_dominators(&rsuccs, &rpreds, n);
        let mut pchildren = vec![Vec::new(); n + 1];
        for (b, d) in ipdom.iter().enumerate() {
            if let Some(d) = *d {
                pchildren[d].push(b);
            }
        }
        let mut ppre = vec![usize::MAX; n + 1];
        let mut ppost = vec![usize::MAX; n + 1];
        let mut pdepth = vec![0; n + 1];
        number_tree(&pchildren, n, &mut ppre, &mut ppost, &mut pdepth);
        let reaches_exit = (0..=n).map(|b| ppre[b] != usize::MAX).collect();

        DomInfo { idom, children, depth, reachable: cfg.reachable.clone(), pre, post, ipdom, ppre, ppost, reaches_exit }
    }

    /// Does `a` dominate `b`? Reflexive.
    pub fn dom(&self, a: usize, b: usize) -> bool {
        self.reachable[a] && self.reachable[b] && self.pre[a] <= self.pre[b] && self.post[b] <= self.post[a]
    }

    pub fn strictly_dom(&self, a: usize, b: usize) -> bool {
        a != b && self.dom(a, b)
    }

    /// Does `a` post-dominate `b`? Reflexive.
    pub fn pdom(&self, a: usize, b: usize) -> bool {
        if a == b {
            return true;
        }
        self.reaches_exit[a] && self.reaches_exit[b] && self.ppre[a] <= self.ppre[b] && self.ppost[b] <= self.ppost[a]
    }

    pub fn idom(&self, b: usize) -> Option<usize> {
        self.idom[b]
    }

    /// Immediate post-dominator; `None` for blocks whose only post-dominator is the exit.
    pub fn ipdom(&self, b: usize) -> Option<usize> {
        self.ipdom[b].filter(|&d| d < self.idom.len())
    }

    pub fn children(&self, b: usize) -> &[usize] {
        &self.children[b]
    }

    pub fn depth(&self, b: usize) -> usize {
        self.depth[b]
    }

    /// Blocks dominated by `b`, in dominator-tree preorder.
    pub fn subtree(&self, b: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![b];
        while let Some(x) = stack.pop() {
            out.push(x);
            stack.extend(self.children[x].iter().rev());
        }
        out
    }

    /// `b` followed by its dominators, innermost first.
    pub fn dominator_chain(&self, b: usize) -> Vec<usize> {
        let mut out = vec![b];
        let mut cur = b;
        while let Some(d) = self.idom[cur] {
            out.push(d);
            cur = d;
        }
        out
    }
}

/// Dominance information; fails if any block is unreachable from the entry.
pub fn dominators(cfg: &Cfg, function: &str) -> Result<DomInfo, CfgError> {
    let labels = cfg.unreachable_labels();
    if !labels.is_empty() {
        return Err(CfgError::Unreachable { function: function.to_string(), labels });
    }
    Ok(DomInfo::compute(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    fn two_guards() -> Cfg {
        let p = parse_program(
            "fn f(q, x) {\nB1: br q, B2, B3\nB2: transmit x\njmp B3\nB3: nq = eq q, 0\nbr nq, B4, B5\nB4: transmit x\njmp B5\nB5: ret\n}",
        )
        .unwrap();
        Cfg::build(&p.functions[0])
    }

    #[test]
    fn entry_dominates_everything() {
        let cfg = two_guards();
        let d = dominators(&cfg, "f").unwrap();
        for b in 0..cfg.len() {
            assert!(d.dom(0, b));
            assert!(d.dom(b, b));
        }
        assert!(!d.dom(1, 2));
        assert!(d.dom(2, 4));
        assert!(d.pdom(4, 0));
        assert!(d.pdom(2, 1));
        assert!(!d.pdom(1, 0));
        assert_eq!(d.idom(4), Some(2));
    }

    #[test]
    fn unreachable_is_an_error() {
        let p = parse_program("fn f() {\nA: ret\nB: ret\n}").unwrap();
        let cfg = Cfg::build(&p.functions[0]);
        let err = dominators(&cfg, "f").unwrap_err();
        assert_eq!(err, CfgError::Unreachable { function: "f".into(), labels: vec!["B".into()] });
    }
}
