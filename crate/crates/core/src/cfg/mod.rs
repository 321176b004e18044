//! Control-flow graphs, dominance, natural loops, loop simplification and
//! partial loop expansion.

mod dom;
mod expand;
mod loops;
mod simplify;

use std::fmt::Write;

use crate::ir::Function;

pub use dom::{dominators, DomInfo};
pub use expand::{expand_loops, CopyTag, EdgeOrigin, ExpandedFunction, VarOrigin, MAX_LOOP_DEPTH};
pub use loops::{natural_loops, NaturalLoop};
pub use simplify::simplify_loops;
pub(crate) use simplify::NameGen;

/// Index of an edge in [`Cfg::edges`].
pub type EdgeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CfgError {
    #[error("function `{function}`: unreachable blocks {labels:?}")]
    Unreachable { function: String, labels: Vec<String> },
    #[error("function `{function}`: irreducible control flow at edge {from} -> {to}")]
    Irreducible { function: String, from: String, to: String },
    #[error("function `{function}`: loop nesting depth {depth} exceeds the limit of {limit}")]
    TooDeep { function: String, depth: usize, limit: usize },
    #[error("function `{function}`: loop headed by `{header}` lacks a preheader or a single latch")]
    NotSimplified { function: String, header: String },
    #[error("function `{function}`: cannot rebuild SSA for `{var}` after expansion")]
    Reconstruction { function: String, var: String },
}

/// A CFG node: a real block or one of the two virtual endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Entry,
    Block(usize),
    Exit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub from: Node,
    pub to: Node,
}

/// The control-flow graph of one function.
///
/// Edge 0 runs from the virtual entry to the first block; every block ending
/// in `ret` has an edge to the virtual exit. Remaining edges follow block
/// order and then successor order.
#[derive(Clone, Debug)]
pub struct Cfg {
    pub labels: Vec<String>,
    pub edges: Vec<Edge>,
    pub succs: Vec<Vec<usize>>,
    pub preds: Vec<Vec<usize>>,
    pub in_edges: Vec<Vec<EdgeId>>,
    pub out_edges: Vec<Vec<EdgeId>>,
    pub reachable: Vec<bool>,
}

impl Cfg {
    pub fn build(f: &Function) -> Cfg {
        let n = f.blocks.len();
        let labels: Vec<String> = f.blocks.iter().map(|b| b.label.clone()).collect();
        let index = f.label_map();
        let mut cfg = Cfg {
            labels,
            edges: Vec::new(),
            succs: vec![Vec::new(); n],
            preds: vec![Vec::new(); n],
            in_edges: vec![Vec::new(); n],
            out_edges: vec![Vec::new(); n],
            reachable: vec![false; n],
        };
        if n == 0 {
            return cfg;
        }
        cfg.push_edge(Node::Entry, Node::Block(0));
        for (b, block) in f.blocks.iter().enumerate() {
            let succs = block.term.successors();
            if succs.is_empty() {
                cfg.push_edge(Node::Block(b), Node::Exit);
            }
            for s in succs {
                if let Some(&t) = index.get(s) {
                    cfg.push_edge(Node::Block(b), Node::Block(t));
                }
            }
        }
        let mut stack = vec![0];
        cfg.reachable[0] = true;
        while let Some(b) = stack.pop() {
            for &s in &cfg.succs[b] {
                if !cfg.reachable[s] {
                    cfg.reachable[s] = true;
                    stack.push(s);
                }
            }
        }
        cfg
    }

    fn push_edge(&mut self, from: Node, to: Node) {
        let id = self.edges.len();
        self.edges.push(Edge { from, to });
        if let Node::Block(b) = from {
            self.out_edges[b].push(id);
        }
        if let Node::Block(b) = to {
            self.in_edges[b].push(id);
        }
        if let (Node::Block(a), Node::Block(b)) = (from, to) {
            self.succs[a].push(b);
            self.preds[b].push(a);
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn entry_edge(&self) -> EdgeId {
        0
    }

    pub fn node_label(&self, n: Node) -> &str {
        match n {
            Node::Entry => "ENTRY",
            Node::Exit => "EXIT",
            Node::Block(b) => &self.labels[b],
        }
    }

    /// Edge id between two labeled nodes (`ENTRY`/`EXIT` for the virtual ones).
    pub fn find_edge(&self, from: &str, to: &str) -> Option<EdgeId> {
        self.edges.iter().position(|e| self.node_label(e.from) == from && self.node_label(e.to) == to)
    }

    pub fn unreachable_labels(&self) -> Vec<String> {
        (0..self.len()).filter(|&b| !self.reachable[b]).map(|b| self.labels[b].clone()).collect()
    }

    /// Graphviz rendering; edges are labeled `e1..eN` as in the numbering above.
    pub fn to_dot(&self, name: &str) -> String {
        let mut out = String::new();
        writeln!(out, "digraph \"{name}\" {{").unwrap();
        writeln!(out, "  ENTRY [shape=point];").unwrap();
        writeln!(out, "  EXIT [shape=point];").unwrap();
        for l in &self.labels {
            writeln!(out, "  \"{l}\" [shape=box];").unwrap();
        }
        for (i, e) in self.edges.iter().enumerate() {
            writeln!(out, "  \"{}\" -> \"{}\" [label=\"e{}\"];", self.node_label(e.from), self.node_label(e.to), i + 1)
                .unwrap();
        }
        out.push_str("}\n");
        out
    }
}

/// Convenience wrapper for [`Cfg::build`].
pub fn build_cfg(f: &Function) -> Cfg {
    Cfg::build(f)
}

/// Nodes reachable from `root`, in reverse postorder.
pub(crate) fn reverse_postorder(succs: &[Vec<usize>], root: usize) -> Vec<usize> {
    let n = succs.len();
    let mut seen = vec![false; n];
    let mut post = Vec::with_capacity(n);
    let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
    seen[root] = true;
    while let Some(top) = stack.last_mut() {
        let b = top.0;
        if top.1 < succs[b].len() {
            let s = succs[b][top.1];
            top.1 += 1;
            if !seen[s] {
                seen[s] = true;
                stack.push((s, 0));
            }
        } else {
            post.push(b);
            stack.pop();
        }
    }
    post.reverse();
    post
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    #[test]
    fn single_block_gets_dummy_edges() {
        let p = parse_program("fn f() { only: ret }").unwrap();
        let cfg = Cfg::build(&p.functions[0]);
        assert_eq!(cfg.edges.len(), 2);
        assert_eq!(cfg.edges[0], Edge { from: Node::Entry, to: Node::Block(0) });
        assert_eq!(cfg.edges[1], Edge { from: Node::Block(0), to: Node::Exit });
    }

    #[test]
    fn edge_numbering_follows_successor_order() {
        let p = parse_program("fn f(q) {\nB1: br q, B2, B3\nB2: jmp B3\nB3: ret\n}").unwrap();
        let cfg = Cfg::build(&p.functions[0]);
        let names: Vec<String> =
            cfg.edges.iter().map(|e| format!("{}-{}", cfg.node_label(e.from), cfg.node_label(e.to))).collect();
        assert_eq!(names, ["ENTRY-B1", "B1-B2", "B1-B3", "B2-B3", "B3-EXIT"]);
        assert!(cfg.to_dot("f").contains("\"B1\" -> \"B3\" [label=\"e3\"]"));
    }
}
