//! Inputs shared by the benchmarks.

use std::fmt::Write as _;

use declassiflow_core::ir::{parse_program, Program};

pub const FIXTURES: [(&str, &str); 3] = [
    ("aes_like", include_str!("../../../fixtures/aes_like.mir")),
    ("sort_like", include_str!("../../../fixtures/sort_like.mir")),
    ("stream_like", include_str!("../../../fixtures/stream_like.mir")),
];

pub fn fixture(name: &str) -> Program {
    let (_, text) = FIXTURES.iter().find(|(n, _)| *n == name).expect("known fixture");
    parse_program(text).expect("fixture parses")
}

/// `n` diamonds in a row. Each diamond transmits the running value on one
/// side and joins through a φ, so knowledge has to travel the whole chain.
pub fn diamond_chain(n: usize) -> Program {
    let mut s = String::from("fn chain(x0) {\nB0:\n  jmp D0\n");
    for i in 0..n {
        let _ = write!(
            s,
            "D{i}:\n  c{i} = input\n  br c{i}, L{i}, R{i}\nL{i}:\n  transmit x{i}\n  l{i} = add x{i}, 1\n  jmp J{i}\n\
             R{i}:\n  r{i} = add x{i}, 1\n  jmp J{i}\nJ{i}:\n  x{n1} = phi [l{i}, L{i}], [r{i}, R{i}]\n  jmp D{n1}\n",
            n1 = i + 1
        );
    }
    let _ = write!(s, "D{n}:\n  transmit x{n}\n  ret\n}}\n");
    parse_program(&s).expect("chain parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_parse() {
        for (n, _) in FIXTURES {
            fixture(n);
        }
        assert_eq!(diamond_chain(3).functions[0].blocks.len(), 2 + 4 * 3);
    }
}
