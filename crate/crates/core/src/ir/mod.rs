//! The mini-IR: a textual SSA language with explicit transmitters.
//!
//! A [`Program`] is a list of [`Function`]s. Each function is a list of
//! [`Block`]s; the first block is the entry block. Values are 32-bit two's
//! complement integers and every arithmetic operation wraps.

mod parse;
mod print;
mod solv;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

pub use parse::{parse_program, parse_unchecked};
pub use print::pretty_print;
pub use solv::{solvability, Equation, SolvClass};
pub use validate::{validate_ssa, ValidationReport, Violation, ViolationKind};

/// Errors produced while reading or classifying IR.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IrError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("invalid program:\n{0}")]
    Invalid(ValidationReport),
    #[error("opcode `{0}` has no equation")]
    NoEquation(Opcode),
}

/// An instruction operand: a variable or an integer literal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operand {
    Var(String),
    Lit(i32),
}

impl Operand {
    pub fn var(name: impl Into<String>) -> Self {
        Operand::Var(name.into())
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Operand::Var(v) => Some(v),
            Operand::Lit(_) => None,
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Var(v) => f.write_str(v),
            Operand::Lit(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinOp {
    Add,
    Sub,
    Xor,
    And,
    Or,
    Mul,
    Shl,
    Eq,
    Lt,
}

impl UnOp {
    pub fn eval(self, a: i32) -> i32 {
        match self {
            UnOp::Neg => a.wrapping_neg(),
            UnOp::Not => !a,
        }
    }

    pub fn opcode(self) -> Opcode {
        match self {
            UnOp::Neg => Opcode::Neg,
            UnOp::Not => Opcode::Not,
        }
    }
}

impl BinOp {
    pub const ALL: [BinOp; 9] =
        [BinOp::Add, BinOp::Sub, BinOp::Xor, BinOp::And, BinOp::Or, BinOp::Mul, BinOp::Shl, BinOp::Eq, BinOp::Lt];

    pub fn eval(self, a: i32, b: i32) -> i32 {
        match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Xor => a ^ b,
            BinOp::And => a & b,
            BinOp::Or => a | b,
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Shl => a.wrapping_shl(b as u32 & 31),
            BinOp::Eq => (a == b) as i32,
            BinOp::Lt => (a < b) as i32,
        }
    }

    pub fn opcode(self) -> Opcode {
        match self {
            BinOp::Add => Opcode::Add,
            BinOp::Sub => Opcode::Sub,
            BinOp::Xor => Opcode::Xor,
            BinOp::And => Opcode::And,
            BinOp::Or => Opcode::Or,
            BinOp::Mul => Opcode::Mul,
            BinOp::Shl => Opcode::Shl,
            BinOp::Eq => Opcode::Eq,
            BinOp::Lt => Opcode::Lt,
        }
    }
}

/// Computes `base + index * scale` with wrapping.
pub fn gep_eval(base: i32, index: i32, scale: i32) -> i32 {
    base.wrapping_add(index.wrapping_mul(scale))
}

/// Every opcode of the IR, including terminators and instrumentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Const,
    Input,
    Add,
    Sub,
    Neg,
    Xor,
    Not,
    Mul,
    And,
    Or,
    Shl,
    Eq,
    Lt,
    Gep,
    Load,
    Store,
    Transmit,
    Phi,
    Call,
    SpecBarr,
    Flag,
    Br,
    Jmp,
    Ret,
}

impl Opcode {
    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Const => "const",
            Opcode::Input => "input",
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::Neg => "neg",
            Opcode::Xor => "xor",
            Opcode::Not => "not",
            Opcode::Mul => "mul",
            Opcode::And => "and",
            Opcode::Or => "or",
            Opcode::Shl => "shl",
            Opcode::Eq => "eq",
            Opcode::Lt => "lt",
            Opcode::Gep => "gep",
            Opcode::Load => "load",
            Opcode::Store => "store",
            Opcode::Transmit => "transmit",
            Opcode::Phi => "phi",
            Opcode::Call => "call",
            Opcode::SpecBarr => "specbarr",
            Opcode::Flag => "flag",
            Opcode::Br => "br",
            Opcode::Jmp => "jmp",
            Opcode::Ret => "ret",
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// A non-terminator instruction.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Inst {
    Const {
        dst: String,
        value: i32,
    },
    Input {
        dst: String,
    },
    Unary {
        dst: String,
        op: UnOp,
        arg: Operand,
    },
    Binary {
        dst: String,
        op: BinOp,
        lhs: Operand,
        rhs: Operand,
    },
    Gep {
        dst: String,
        base: Operand,
        index: Operand,
        scale: i32,
    },
    Load {
        dst: String,
        addr: Operand,
    },
    Store {
        value: Operand,
        addr: Operand,
    },
    Transmit {
        value: Operand,
        speculative: bool,
    },
    Phi {
        dst: String,
        incoming: Vec<(Operand, String)>,
    },
    Call {
        dst: Option<String>,
        callee: String,
        args: Vec<Operand>,
    },
    SpecBarr,
    /// Instrumentation: assign the refinement flag.
    FlagSet(i32),
    /// Instrumentation: assert the refinement flag differs from a value.
    FlagAssertNe(i32),
}

/// How a transmitter may execute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransmitKind {
    /// Executes (and leaks) under speculation as well as non-speculatively.
    Speculative,
    /// Leaks only when executed non-speculatively.
    NonSpeculative,
}

impl Inst {
    pub fn opcode(&self) -> Opcode {
        match self {
            Inst::Const { .. } => Opcode::Const,
            Inst::Input { .. } => Opcode::Input,
            Inst::Unary { op, .. } => op.opcode(),
            Inst::Binary { op, .. } => op.opcode(),
            Inst::Gep { .. } => Opcode::Gep,
            Inst::Load { .. } => Opcode::Load,
            Inst::Store { .. } => Opcode::Store,
            Inst::Transmit { .. } => Opcode::Transmit,
            Inst::Phi { .. } => Opcode::Phi,
            Inst::Call { .. } => Opcode::Call,
            Inst::SpecBarr => Opcode::SpecBarr,
            Inst::FlagSet(_) | Inst::FlagAssertNe(_) => Opcode::Flag,
        }
    }

    pub fn dst(&self) -> Option<&str> {
        match self {
            Inst::Const { dst, .. }
            | Inst::Input { dst }
            | Inst::Unary { dst, .. }
            | Inst::Binary { dst, .. }
            | Inst::Gep { dst, .. }
            | Inst::Load { dst, .. }
            | Inst::Phi { dst, .. } => Some(dst),
            Inst::Call { dst, .. } => dst.as_deref(),
            _ => None,
        }
    }

    pub fn dst_mut(&mut self) -> Option<&mut String> {
        match self {
            Inst::Const { dst, .. }
            | Inst::Input { dst }
            | Inst::Unary { dst, .. }
            | Inst::Binary { dst, .. }
            | Inst::Gep { dst, .. }
            | Inst::Load { dst, .. }
            | Inst::Phi { dst, .. } => Some(dst),
            Inst::Call { dst, .. } => dst.as_mut(),
            _ => None,
        }
    }

    pub fn is_phi(&self) -> bool {
        matches!(self, Inst::Phi { .. })
    }

    pub fn is_instrumentation(&self) -> bool {
        matches!(self, Inst::FlagSet(_) | Inst::FlagAssertNe(_))
    }

    /// Operands read by the instruction, in textual order.
    pub fn uses(&self) -> Vec<&Operand> {
        match self {
            Inst::Const { .. } | Inst::Input { .. } => vec![],
            Inst::Unary { arg, .. } => vec![arg],
            Inst::Binary { lhs, rhs, .. } => vec![lhs, rhs],
            Inst::Gep { base, index, .. } => vec![base, index],
            Inst::Load { addr, .. } => vec![addr],
            Inst::Store { value, addr } => vec![value, addr],
            Inst::Transmit { value, .. } => vec![value],
            Inst::Phi { incoming, .. } => incoming.iter().map(|(v, _)| v).collect(),
            Inst::Call { args, .. } => args.iter().collect(),
            Inst::SpecBarr | Inst::FlagSet(_) | Inst::FlagAssertNe(_) => vec![],
        }
    }

    pub fn for_each_use_mut(&mut self, mut f: impl FnMut(&mut Operand)) {
        match self {
            Inst::Const { .. } | Inst::Input { .. } => {}
            Inst::Unary { arg, .. } => f(arg),
            Inst::Binary { lhs, rhs, .. } => {
                f(lhs);
                f(rhs);
            }
            Inst::Gep { base, index, .. } => {
                f(base);
                f(index);
            }
            Inst::Load { addr, .. } => f(addr),
            Inst::Store { value, addr } => {
                f(value);
                f(addr);
            }
            Inst::Transmit { value, .. } => f(value),
            Inst::Phi { incoming, .. } => incoming.iter_mut().for_each(|(v, _)| f(v)),
            Inst::Call { args, .. } => args.iter_mut().for_each(f),
            Inst::SpecBarr | Inst::FlagSet(_) | Inst::FlagAssertNe(_) => {}
        }
    }

    /// The operand this instruction leaks, if it is a transmitter.
    pub fn transmitted(&self) -> Option<(&Operand, TransmitKind)> {
        match self {
            Inst::Load { addr, .. } => Some((addr, TransmitKind::Speculative)),
            Inst::Store { addr, .. } => Some((addr, TransmitKind::NonSpeculative)),
            Inst::Transmit { value, speculative } => {
                Some((value, if *speculative { TransmitKind::Speculative } else { TransmitKind::NonSpeculative }))
            }
            _ => None,
        }
    }

    /// Loads, stores and explicit transmits (branches are terminators).
    pub fn is_transmitter(&self) -> bool {
        self.transmitted().is_some()
    }
}

/// The instruction ending a block.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Terminator {
    Br { cond: Operand, then_target: String, else_target: String },
    Jmp(String),
    Ret(Option<Operand>),
}

impl Terminator {
    pub fn successors(&self) -> Vec<&str> {
        match self {
            Terminator::Br { then_target, else_target, .. } => vec![then_target, else_target],
            Terminator::Jmp(t) => vec![t],
            Terminator::Ret(_) => vec![],
        }
    }

    pub fn for_each_target_mut(&mut self, mut f: impl FnMut(&mut String)) {
        match self {
            Terminator::Br { then_target, else_target, .. } => {
                f(then_target);
                f(else_target);
            }
            Terminator::Jmp(t) => f(t),
            Terminator::Ret(_) => {}
        }
    }

    pub fn uses(&self) -> Vec<&Operand> {
        match self {
            Terminator::Br { cond, .. } => vec![cond],
            Terminator::Jmp(_) => vec![],
            Terminator::Ret(v) => v.iter().collect(),
        }
    }

    pub fn for_each_use_mut(&mut self, mut f: impl FnMut(&mut Operand)) {
        match self {
            Terminator::Br { cond, .. } => f(cond),
            Terminator::Jmp(_) => {}
            Terminator::Ret(v) => v.iter_mut().for_each(f),
        }
    }

    pub fn opcode(&self) -> Opcode {
        match self {
            Terminator::Br { .. } => Opcode::Br,
            Terminator::Jmp(_) => Opcode::Jmp,
            Terminator::Ret(_) => Opcode::Ret,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Block {
    pub label: String,
    pub insts: Vec<Inst>,
    pub term: Terminator,
}

impl Block {
    pub fn new(label: impl Into<String>, insts: Vec<Inst>, term: Terminator) -> Self {
        Block { label: label.into(), insts, term }
    }

    /// Number of leading φ instructions.
    pub fn phi_count(&self) -> usize {
        self.insts.iter().take_while(|i| i.is_phi()).count()
    }

    pub fn has_transmitter(&self) -> bool {
        self.insts.iter().any(Inst::is_transmitter)
    }
}

/// Where a variable is defined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum DefSite {
    Param(usize),
    Inst { block: usize, index: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Function {
    pub name: String,
    pub params: Vec<String>,
    pub blocks: Vec<Block>,
}

impl Function {
    pub fn entry_block(&self) -> &Block {
        &self.blocks[0]
    }

    pub fn exit_blocks(&self) -> Vec<&str> {
        self.blocks.iter().filter(|b| matches!(b.term, Terminator::Ret(_))).map(|b| b.label.as_str()).collect()
    }

    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }

    pub fn block(&self, label: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn label_map(&self) -> BTreeMap<&str, usize> {
        self.blocks.iter().enumerate().map(|(i, b)| (b.label.as_str(), i)).collect()
    }

    /// Definition sites. On duplicate definitions the first one wins.
    pub fn defs(&self) -> BTreeMap<&str, DefSite> {
        let mut out = BTreeMap::new();
        for (i, p) in self.params.iter().enumerate() {
            out.entry(p.as_str()).or_insert(DefSite::Param(i));
        }
        for (b, block) in self.blocks.iter().enumerate() {
            for (index, inst) in block.insts.iter().enumerate() {
                if let Some(d) = inst.dst() {
                    out.entry(d).or_insert(DefSite::Inst { block: b, index });
                }
            }
        }
        out
    }

    /// All variable names: parameters first, then definitions in block order.
    pub fn variables(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.params.iter().map(String::as_str).collect();
        for block in &self.blocks {
            out.extend(block.insts.iter().filter_map(Inst::dst));
        }
        out
    }

    pub fn callees(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for block in &self.blocks {
            for inst in &block.insts {
                if let Inst::Call { callee, .. } = inst {
                    if !out.contains(&callee.as_str()) {
                        out.push(callee.as_str());
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Program {
    pub functions: Vec<Function>,
    /// First function, in file order, that no other function calls.
    pub entry_function: Option<String>,
}

impl Program {
    pub fn new(functions: Vec<Function>) -> Self {
        let entry_function = top_level(&functions).first().map(|s| s.to_string());
        Program { functions, entry_function }
    }

    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_index(&self, name: &str) -> Option<usize> {
        self.functions.iter().position(|f| f.name == name)
    }

    /// Functions not called by any other function, in program order.
    pub fn top_level(&self) -> Vec<&str> {
        top_level(&self.functions)
    }

    /// Function indices ordered callees first. Assumes an acyclic call graph;
    /// functions on a cycle are appended in program order.
    pub fn callee_first_order(&self) -> Vec<usize> {
        let mut order = Vec::new();
        let mut state = vec![0u8; self.functions.len()];
        fn visit(p: &Program, i: usize, state: &mut [u8], order: &mut Vec<usize>) {
            if state[i] != 0 {
                return;
            }
            state[i] = 1;
            for c in p.functions[i].callees() {
                if let Some(j) = p.function_index(c) {
                    visit(p, j, state, order);
                }
            }
            state[i] = 2;
            order.push(i);
        }
        for i in 0..self.functions.len() {
            visit(self, i, &mut state, &mut order);
        }
        order
    }
}

fn top_level(functions: &[Function]) -> Vec<&str> {
    let called: Vec<&str> = functions.iter().flat_map(|f| f.callees()).collect();
    functions.iter().map(|f| f.name.as_str()).filter(|n| !called.contains(n)).collect()
}

/// Words that cannot be used as variable names, labels or function names.
pub const KEYWORDS: &[&str] = &[
    "fn",
    "const",
    "input",
    "add",
    "sub",
    "neg",
    "xor",
    "not",
    "mul",
    "and",
    "or",
    "shl",
    "eq",
    "lt",
    "gep",
    "load",
    "store",
    "transmit",
    "transmit.ns",
    "phi",
    "call",
    "specbarr",
    "flag.set",
    "flag.assert_ne",
    "br",
    "jmp",
    "ret",
];
