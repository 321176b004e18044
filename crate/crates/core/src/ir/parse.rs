use super::{validate_ssa, BinOp, Block, Function, Inst, IrError, Operand, Program, Terminator, UnOp, KEYWORDS};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Punct(char),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn lex(text: &str) -> Result<Vec<Token>, IrError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let (line, col) = (lineno + 1, i + 1);
            if c.is_whitespace() {
                i += 1;
            } else if is_ident_start(c) {
                let start = i;
                while i < chars.len() && is_ident_char(chars[i]) {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                out.push(Token { tok: Tok::Ident(s), line, col });
            } else if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
                let start = i;
                i += 1;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric()) {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                let value = parse_int(&s).ok_or_else(|| IrError::Syntax {
                    line,
                    col,
                    msg: format!("bad integer literal `{s}`"),
                })?;
                out.push(Token { tok: Tok::Int(value), line, col });
            } else if "(){}[],:=".contains(c) {
                out.push(Token { tok: Tok::Punct(c), line, col });
                i += 1;
            } else {
                return Err(IrError::Syntax { line, col, msg: format!("unexpected character `{c}`") });
            }
        }
    }
    let (line, col) = out.last().map(|t| (t.line, t.col + 1)).unwrap_or((1, 1));
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

fn parse_int(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let v = if let Some(hex) = body.strip_prefix("0x") {
        i64::from_str_radix(hex, 16).ok()?
    } else {
        body.parse::<i64>().ok()?
    };
    let v = if neg { -v } else { v };
    (i64::from(i32::MIN)..=i64::from(u32::MAX)).contains(&v).then_some(v)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, IrError> {
        let t = &self.toks[self.pos];
        Err(IrError::Syntax { line: t.line, col: t.col, msg: msg.into() })
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, c: char) -> Result<(), IrError> {
        if *self.peek() == Tok::Punct(c) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected `{c}`, found {}", describe(self.peek())))
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if *self.peek() == Tok::Punct(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), IrError> {
        match self.peek() {
            Tok::Ident(s) if s == kw => {
                self.bump();
                Ok(())
            }
            other => self.err(format!("expected `{kw}`, found {}", describe(other))),
        }
    }

    fn name(&mut self, what: &str) -> Result<String, IrError> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            other => self.err(format!("expected {what}, found {}", describe(&other))),
        }
    }

    fn int(&mut self) -> Result<i32, IrError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(v as i32)
            }
            other => self.err(format!("expected integer, found {}", describe(&other))),
        }
    }

    fn operand(&mut self) -> Result<Operand, IrError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Operand::Lit(v as i32))
            }
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(Operand::Var(s))
            }
            other => self.err(format!("expected operand, found {}", describe(&other))),
        }
    }

    fn program(&mut self) -> Result<Vec<Function>, IrError> {
        let mut functions = Vec::new();
        while *self.peek() != Tok::Eof {
            functions.push(self.function()?);
        }
        Ok(functions)
    }

    fn function(&mut self) -> Result<Function, IrError> {
        self.keyword("fn")?;
        let name = self.name("function name")?;
        self.expect('(')?;
        let mut params = Vec::new();
        if !self.eat(')') {
            loop {
                params.push(self.name("parameter name")?);
                if self.eat(')') {
                    break;
                }
                self.expect(',')?;
            }
        }
        self.expect('{')?;
        let mut blocks = Vec::new();
        while !self.eat('}') {
            blocks.push(self.block()?);
        }
        if blocks.is_empty() {
            return self.err(format!("function `{name}` has no blocks"));
        }
        Ok(Function { name, params, blocks })
    }

    fn block(&mut self) -> Result<Block, IrError> {
        let label = self.name("block label")?;
        self.expect(':')?;
        let mut insts = Vec::new();
        loop {
            if let Some(term) = self.terminator()? {
                return Ok(Block { label, insts, term });
            }
            insts.push(self.instruction()?);
        }
    }

    fn terminator(&mut self) -> Result<Option<Terminator>, IrError> {
        let Tok::Ident(word) = self.peek().clone() else {
            return self.err(format!("expected instruction, found {}", describe(self.peek())));
        };
        let term = match word.as_str() {
            "br" => {
                self.bump();
                let cond = self.operand()?;
                self.expect(',')?;
                let then_target = self.name("label")?;
                self.expect(',')?;
                let else_target = self.name("label")?;
                Terminator::Br { cond, then_target, else_target }
            }
            "jmp" => {
                self.bump();
                Terminator::Jmp(self.name("label")?)
            }
            "ret" => {
                self.bump();
                let has_value = match (self.peek(), self.peek_at(1)) {
                    (Tok::Int(_), _) => true,
                    (Tok::Ident(s), next) => !KEYWORDS.contains(&s.as_str()) && *next != Tok::Punct(':'),
                    _ => false,
                };
                Terminator::Ret(if has_value { Some(self.operand()?) } else { None })
            }
            _ => return Ok(None),
        };
        Ok(Some(term))
    }

    fn call_tail(&mut self, dst: Option<String>) -> Result<Inst, IrError> {
        let callee = self.name("function name")?;
        self.expect('(')?;
        let mut args = Vec::new();
        if !self.eat(')') {
            loop {
                args.push(self.operand()?);
                if self.eat(')') {
                    break;
                }
                self.expect(',')?;
            }
        }
        Ok(Inst::Call { dst, callee, args })
    }

    fn instruction(&mut self) -> Result<Inst, IrError> {
        let Tok::Ident(word) = self.peek().clone() else {
            return self.err(format!("expected instruction, found {}", describe(self.peek())));
        };
        match word.as_str() {
            "store" => {
                self.bump();
                let value = self.operand()?;
                self.expect(',')?;
                let addr = self.operand()?;
                return Ok(Inst::Store { value, addr });
            }
            "transmit" | "transmit.ns" => {
                self.bump();
                let value = self.operand()?;
                return Ok(Inst::Transmit { value, speculative: word == "transmit" });
            }
            "specbarr" => {
                self.bump();
                return Ok(Inst::SpecBarr);
            }
            "flag.set" => {
                self.bump();
                return Ok(Inst::FlagSet(self.int()?));
            }
            "flag.assert_ne" => {
                self.bump();
                return Ok(Inst::FlagAssertNe(self.int()?));
            }
            "call" => {
                self.bump();
                return self.call_tail(None);
            }
            _ => {}
        }
        let dst = self.name("variable name or instruction")?;
        self.expect('=')?;
        let Tok::Ident(op) = self.peek().clone() else {
            return self.err(format!("expected opcode, found {}", describe(self.peek())));
        };
        self.bump();
        let binop = |s: &str| BinOp::ALL.into_iter().find(|b| b.opcode().mnemonic() == s);
        let inst = match op.as_str() {
            "const" => Inst::Const { dst, value: self.int()? },
            "input" => Inst::Input { dst },
            "neg" => Inst::Unary { dst, op: UnOp::Neg, arg: self.operand()? },
            "not" => Inst::Unary { dst, op: UnOp::Not, arg: self.operand()? },
            "gep" => {
                let base = self.operand()?;
                self.expect(',')?;
                let index = self.operand()?;
                self.expect(',')?;
                let scale = self.int()?;
                Inst::Gep { dst, base, index, scale }
            }
            "load" => Inst::Load { dst, addr: self.operand()? },
            "phi" => {
                let mut incoming = Vec::new();
                loop {
                    self.expect('[')?;
                    let v = self.operand()?;
                    self.expect(',')?;
                    let l = self.name("label")?;
                    self.expect(']')?;
                    incoming.push((v, l));
                    if !self.eat(',') {
                        break;
                    }
                }
                Inst::Phi { dst, incoming }
            }
            "call" => self.call_tail(Some(dst))?,
            other => match binop(other) {
                Some(op) => {
                    let lhs = self.operand()?;
                    self.expect(',')?;
                    let rhs = self.operand()?;
                    Inst::Binary { dst, op, lhs, rhs }
                }
                None => {
                    self.pos -= 1;
                    return self.err(format!("unknown opcode `{other}`"));
                }
            },
        };
        Ok(inst)
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Int(v) => format!("`{v}`"),
        Tok::Punct(c) => format!("`{c}`"),
        Tok::Eof => "end of input".to_string(),
    }
}

/// Parses source text without semantic validation.
pub fn parse_unchecked(text: &str) -> Result<Program, IrError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    Ok(Program::new(p.program()?))
}

/// Parses and validates a program.
pub fn parse_program(text: &str) -> Result<Program, IrError> {
    let program = parse_unchecked(text)?;
    let report = validate_ssa(&program);
    if report.is_empty() {
        Ok(program)
    } else {
        Err(IrError::Invalid(report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_line_function() {
        let p = parse_program("fn f() { entry: ret }").unwrap();
        assert_eq!(p.functions.len(), 1);
        let f = &p.functions[0];
        assert_eq!(f.blocks.len(), 1);
        assert!(f.blocks[0].insts.is_empty());
        assert_eq!(f.blocks[0].term, Terminator::Ret(None));
    }

    #[test]
    fn ret_value_versus_next_label() {
        let p = parse_unchecked("fn f(a) {\nA: jmp B\nB: ret a\n}\nfn g() { E: ret\nF: ret }").unwrap();
        assert_eq!(p.functions[0].blocks[1].term, Terminator::Ret(Some(Operand::var("a"))));
        assert_eq!(p.functions[1].blocks[0].term, Terminator::Ret(None));
        assert_eq!(p.functions[1].blocks.len(), 2);
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_program("fn f() {\n  entry:\n    x = frob 1\n    ret\n}").unwrap_err();
        match err {
            IrError::Syntax { line, col, .. } => assert_eq!((line, col), (3, 9)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn literals_and_comments() {
        let p =
            parse_unchecked("# header\nfn f() {\nb: x = add -3, 0x10 # tail\ny = const -2147483648\nret x\n}").unwrap();
        let insts = &p.functions[0].blocks[0].insts;
        assert_eq!(
            insts[0],
            Inst::Binary { dst: "x".into(), op: BinOp::Add, lhs: Operand::Lit(-3), rhs: Operand::Lit(16) }
        );
        assert_eq!(insts[1], Inst::Const { dst: "y".into(), value: i32::MIN });
    }

    #[test]
    fn phi_and_calls() {
        let text =
            "fn g(a) { e: ret }\nfn f(p) {\nB1: jmp B2\nB2: b3 = phi [p, B1]\ncall g(b3)\nr = call g(1)\nret r\n}";
        let p = parse_program(text).unwrap();
        let b2 = &p.functions[1].blocks[1];
        assert!(matches!(&b2.insts[0], Inst::Phi { incoming, .. } if incoming.len() == 1));
        assert!(matches!(&b2.insts[1], Inst::Call { dst: None, .. }));
        assert!(matches!(&b2.insts[2], Inst::Call { dst: Some(_), .. }));
        assert_eq!(p.entry_function.as_deref(), Some("f"));
    }

    #[test]
    fn unknown_label_and_callee_are_rejected() {
        assert!(matches!(parse_program("fn f() { a: jmp nowhere }"), Err(IrError::Invalid(_))));
        assert!(matches!(parse_program("fn f() { a: call g()\nret }"), Err(IrError::Invalid(_))));
    }

    #[test]
    fn self_use_is_rejected() {
        let err = parse_program("fn f() { entry: x = add x, one\nret }").unwrap_err();
        let IrError::Invalid(report) = err else { panic!() };
        assert!(report.violations.iter().any(|v| v.message.contains("not dominated")));
    }
}
