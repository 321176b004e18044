use std::collections::BTreeSet;

use super::{Inst, IrError, Opcode, Operand};

/// Which directions of an instruction's equation `y = f(x1, .., xn)` can be
/// solved for an unknown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolvClass {
    pub forward: bool,
    pub backward_operands: BTreeSet<usize>,
}

/// Looks up the fixed solvability table for a deterministic opcode.
pub fn solvability(opcode: Opcode, operand_count: usize) -> Result<SolvClass, IrError> {
    let all = || (0..operand_count).collect::<BTreeSet<_>>();
    let backward_operands = match opcode {
        Opcode::Add | Opcode::Sub | Opcode::Xor | Opcode::Neg | Opcode::Not => all(),
        Opcode::Mul | Opcode::And | Opcode::Or | Opcode::Shl | Opcode::Eq | Opcode::Lt => BTreeSet::new(),
        Opcode::Const => BTreeSet::new(),
        // gep base, idx: the base is recoverable from the address and index.
        Opcode::Gep => {
            if operand_count > 0 {
                BTreeSet::from([0])
            } else {
                BTreeSet::new()
            }
        }
        other => return Err(IrError::NoEquation(other)),
    };
    Ok(SolvClass { forward: true, backward_operands })
}

/// A deterministic instruction viewed as an equation over its variables.
/// Literal inputs are always known.
#[derive(Clone, Debug)]
pub struct Equation<'a> {
    pub output: &'a str,
    pub inputs: Vec<&'a Operand>,
    pub class: SolvClass,
}

impl<'a> Equation<'a> {
    /// The equation of a non-φ deterministic instruction, if any.
    pub fn of(inst: &'a Inst) -> Option<Equation<'a>> {
        let (output, inputs) = match inst {
            Inst::Const { dst, .. } => (dst.as_str(), vec![]),
            Inst::Unary { dst, arg, .. } => (dst.as_str(), vec![arg]),
            Inst::Binary { dst, lhs, rhs, .. } => (dst.as_str(), vec![lhs, rhs]),
            Inst::Gep { dst, base, index, .. } => (dst.as_str(), vec![base, index]),
            _ => return None,
        };
        let class = solvability(inst.opcode(), inputs.len()).ok()?;
        Some(Equation { output, inputs, class })
    }

    /// Backward-solvable positions whose variable appears nowhere else in
    /// the equation (solving `b = add a, a` for `a` is not attempted).
    pub fn solvable_positions(&self) -> Vec<usize> {
        self.class
            .backward_operands
            .iter()
            .copied()
            .filter(|&j| match self.inputs[j].as_var() {
                Some(v) => {
                    v != self.output && self.inputs.iter().enumerate().all(|(i, x)| i == j || x.as_var() != Some(v))
                }
                None => false,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_is_solvable_both_ways() {
        let c = solvability(Opcode::Add, 2).unwrap();
        assert!(c.forward);
        assert_eq!(c.backward_operands, BTreeSet::from([0, 1]));
    }

    #[test]
    fn mul_is_forward_only() {
        let c = solvability(Opcode::Mul, 2).unwrap();
        assert!(c.forward);
        assert!(c.backward_operands.is_empty());
    }

    #[test]
    fn neg_inverts() {
        let c = solvability(Opcode::Neg, 1).unwrap();
        assert_eq!(c.backward_operands, BTreeSet::from([0]));
    }

    #[test]
    fn gep_recovers_base_only() {
        let c = solvability(Opcode::Gep, 2).unwrap();
        assert_eq!(c.backward_operands, BTreeSet::from([0]));
    }

    #[test]
    fn nondeterministic_opcodes_have_no_equation() {
        for op in [Opcode::Input, Opcode::Load, Opcode::Store, Opcode::Transmit, Opcode::Call, Opcode::Br] {
            assert_eq!(solvability(op, 1), Err(IrError::NoEquation(op)));
        }
        assert!(solvability(Opcode::Phi, 2).is_err());
    }

    #[test]
    fn table_is_consistent() {
        let ops = [
            (Opcode::Const, 0),
            (Opcode::Add, 2),
            (Opcode::Sub, 2),
            (Opcode::Xor, 2),
            (Opcode::And, 2),
            (Opcode::Or, 2),
            (Opcode::Mul, 2),
            (Opcode::Shl, 2),
            (Opcode::Eq, 2),
            (Opcode::Lt, 2),
            (Opcode::Neg, 1),
            (Opcode::Not, 1),
            (Opcode::Gep, 2),
        ];
        for (op, n) in ops {
            let c = solvability(op, n).unwrap();
            assert!(c.backward_operands.iter().all(|&i| i < n), "{op}");
            assert!(c.backward_operands.is_empty() || c.forward);
        }
    }
}
