use std::fmt::{self, Write};

use super::{Block, Function, Inst, Program, Terminator};

impl fmt::Display for Inst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Inst::Const { dst, value } => write!(f, "{dst} = const {value}"),
            Inst::Input { dst } => write!(f, "{dst} = input"),
            Inst::Unary { dst, op, arg } => write!(f, "{dst} = {} {arg}", op.opcode()),
            Inst::Binary { dst, op, lhs, rhs } => write!(f, "{dst} = {} {lhs}, {rhs}", op.opcode()),
            Inst::Gep { dst, base, index, scale } => write!(f, "{dst} = gep {base}, {index}, {scale}"),
            Inst::Load { dst, addr } => write!(f, "{dst} = load {addr}"),
            Inst::Store { value, addr } => write!(f, "store {value}, {addr}"),
            Inst::Transmit { value, speculative: true } => write!(f, "transmit {value}"),
            Inst::Transmit { value, speculative: false } => write!(f, "transmit.ns {value}"),
            Inst::Phi { dst, incoming } => {
                write!(f, "{dst} = phi ")?;
                for (i, (v, l)) in incoming.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "[{v}, {l}]")?;
                }
                Ok(())
            }
            Inst::Call { dst, callee, args } => {
                if let Some(d) = dst {
                    write!(f, "{d} = ")?;
                }
                write!(f, "call {callee}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Inst::SpecBarr => f.write_str("specbarr"),
            Inst::FlagSet(v) => write!(f, "flag.set {v}"),
            Inst::FlagAssertNe(v) => write!(f, "flag.assert_ne {v}"),
        }
    }
}

impl fmt::Display for Terminator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Terminator::Br { cond, then_target, else_target } => {
                write!(f, "br {cond}, {then_target}, {else_target}")
            }
            Terminator::Jmp(t) => write!(f, "jmp {t}"),
            Terminator::Ret(None) => f.write_str("ret"),
            Terminator::Ret(Some(v)) => write!(f, "ret {v}"),
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}:", self.label)?;
        for inst in &self.insts {
            writeln!(f, "  {inst}")?;
        }
        writeln!(f, "  {}", self.term)
    }
}

impl fmt::Display for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "fn {}({}) {{", self.name, self.params.join(", "))?;
        for block in &self.blocks {
            write!(f, "{block}")?;
        }
        writeln!(f, "}}")
    }
}

/// Canonical text for a program; functions are separated by a blank line.
pub fn pretty_print(p: &Program) -> String {
    let mut out = String::new();
    for (i, func) in p.functions.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        write!(out, "{func}").unwrap();
    }
    out
}
