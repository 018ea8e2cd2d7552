//! Arithmetic expression DSL used for problem coefficients.
//!
//! Expressions are built from constants, declared variables (`t`, `x1`,
//! ..., `xn`), the binary operators `+ - * / ^`, unary minus, and the
//! functions `abs`, `min`, `max`, `exp`, `sqrt`, `tanh`. Precedence is
//! `^` > unary `-` > `* /` > `+ -`, all binaries left-associative.
//!
//! Evaluation is total over the declared variables: division by zero and
//! square roots of negative numbers are reported as errors rather than
//! producing NaN.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("unbound variable `{name}`")]
    UnboundVariable { name: String },
    #[error("domain error: {message}")]
    Domain { message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }

    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Abs,
    Min,
    Max,
    Exp,
    Sqrt,
    Tanh,
}

impl Func {
    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
        }
    }

    fn lookup(name: &str) -> Option<Func> {
        match name {
            "abs" => Some(Func::Abs),
            "min" => Some(Func::Min),
            "max" => Some(Func::Max),
            "exp" => Some(Func::Exp),
            "sqrt" => Some(Func::Sqrt),
            "tanh" => Some(Func::Tanh),
            _ => None,
        }
    }
}

/// Parsed expression tree. `Var` carries both the display name and the
/// positional slot into the declared-variable list, so hot loops can bind
/// values by position instead of by name.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var { name: String, slot: usize },
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Const(_) | Expr::Var { .. } | Expr::Call(..) => 5,
            Expr::Neg(_) => 3,
            Expr::Binary(op, ..) => op.precedence(),
        }
    }

    /// Evaluates with variable values bound positionally, in the order the
    /// variables were declared at parse time.
    pub fn eval(&self, values: &[f64]) -> Result<f64, ExprError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var { name, slot } => values.get(*slot).copied().ok_or_else(|| {
                ExprError::UnboundVariable { name: name.clone() }
            }),
            Expr::Neg(inner) => Ok(-inner.eval(values)?),
            Expr::Binary(op, lhs, rhs) => {
                apply_bin(*op, lhs.eval(values)?, rhs.eval(values)?)
            }
            Expr::Call(func, args) => {
                let mut vals = [0.0f64; 2];
                for (i, arg) in args.iter().enumerate() {
                    vals[i] = arg.eval(values)?;
                }
                apply_func(*func, vals)
            }
        }
    }

    /// Evaluates with variables bound by name.
    pub fn eval_map(&self, bindings: &BTreeMap<String, f64>) -> Result<f64, ExprError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var { name, .. } => bindings.get(name).copied().ok_or_else(|| {
                ExprError::UnboundVariable { name: name.clone() }
            }),
            Expr::Neg(inner) => Ok(-inner.eval_map(bindings)?),
            Expr::Binary(op, lhs, rhs) => {
                apply_bin(*op, lhs.eval_map(bindings)?, rhs.eval_map(bindings)?)
            }
            Expr::Call(func, args) => {
                let mut vals = [0.0f64; 2];
                for (i, arg) in args.iter().enumerate() {
                    vals[i] = arg.eval_map(bindings)?;
                }
                apply_func(*func, vals)
            }
        }
    }
}

fn apply_bin(op: BinOp, a: f64, b: f64) -> Result<f64, ExprError> {
    match op {
        BinOp::Add => Ok(a + b),
        BinOp::Sub => Ok(a - b),
        BinOp::Mul => Ok(a * b),
        BinOp::Div => {
            if b == 0.0 {
                Err(ExprError::Domain { message: format!("division by zero ({a} / 0)") })
            } else {
                Ok(a / b)
            }
        }
        BinOp::Pow => {
            let r = a.powf(b);
            if r.is_nan() && !a.is_nan() && !b.is_nan() {
                Err(ExprError::Domain { message: format!("{a} ^ {b} is undefined") })
            } else {
                Ok(r)
            }
        }
    }
}

fn apply_func(func: Func, vals: [f64; 2]) -> Result<f64, ExprError> {
    match func {
        Func::Abs => Ok(vals[0].abs()),
        Func::Min => Ok(vals[0].min(vals[1])),
        Func::Max => Ok(vals[0].max(vals[1])),
        Func::Exp => Ok(vals[0].exp()),
        Func::Tanh => Ok(vals[0].tanh()),
        Func::Sqrt => {
            if vals[0] < 0.0 {
                Err(ExprError::Domain {
                    message: format!("sqrt of negative number {}", vals[0]),
                })
            } else {
                Ok(vals[0].sqrt())
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var { name, .. } => write!(f, "{name}"),
            Expr::Neg(inner) => {
                if inner.precedence() < 3 {
                    write!(f, "-({inner})")
                } else {
                    write!(f, "-{inner}")
                }
            }
            Expr::Binary(op, lhs, rhs) => {
                let p = op.precedence();
                if lhs.precedence() < p {
                    write!(f, "({lhs})")?;
                } else {
                    write!(f, "{lhs}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if rhs.precedence() <= p {
                    write!(f, "({rhs})")
                } else {
                    write!(f, "{rhs}")
                }
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, arg) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{arg}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

struct Lexer<'a> {
    src: &'a str,
    tokens: Vec<(Token, usize)>,
}

impl<'a> Lexer<'a> {
    fn lex(src: &'a str) -> Result<Vec<(Token, usize)>, ExprError> {
        let mut lx = Lexer { src, tokens: Vec::new() };
        lx.run()?;
        Ok(lx.tokens)
    }

    fn run(&mut self) -> Result<(), ExprError> {
        let bytes = self.src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let b = bytes[i];
            match b {
                b' ' | b'\t' | b'\r' | b'\n' => i += 1,
                b'+' => { self.tokens.push((Token::Plus, i)); i += 1; }
                b'-' => { self.tokens.push((Token::Minus, i)); i += 1; }
                b'*' => { self.tokens.push((Token::Star, i)); i += 1; }
                b'/' => { self.tokens.push((Token::Slash, i)); i += 1; }
                b'^' => { self.tokens.push((Token::Caret, i)); i += 1; }
                b'(' => { self.tokens.push((Token::LParen, i)); i += 1; }
                b')' => { self.tokens.push((Token::RParen, i)); i += 1; }
                b',' => { self.tokens.push((Token::Comma, i)); i += 1; }
                b'0'..=b'9' | b'.' => {
                    let start = i;
                    while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                        i += 1;
                    }
                    // Optional exponent part.
                    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                        let mut j = i + 1;
                        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                            j += 1;
                        }
                        if j < bytes.len() && bytes[j].is_ascii_digit() {
                            i = j;
                            while i < bytes.len() && bytes[i].is_ascii_digit() {
                                i += 1;
                            }
                        }
                    }
                    let text = &self.src[start..i];
                    let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
                        offset: start,
                        message: format!("invalid number literal `{text}`"),
                    })?;
                    self.tokens.push((Token::Num(value), start));
                }
                b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                    let start = i;
                    while i < bytes.len()
                        && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                    {
                        i += 1;
                    }
                    self.tokens.push((Token::Ident(self.src[start..i].to_string()), start));
                }
                _ => {
                    return Err(ExprError::Syntax {
                        offset: i,
                        message: format!(
                            "unexpected character `{}`",
                            self.src[i..].chars().next().unwrap()
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Nesting bound for the recursive-descent parser; inputs deeper than this
/// are rejected instead of risking the call stack.
const MAX_PARSE_DEPTH: usize = 256;

struct Parser<'a> {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    vars: &'a [String],
    src_len: usize,
    depth: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&(Token, usize)> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<(Token, usize)> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn end_offset(&self) -> usize {
        self.src_len
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        self.depth += 1;
        if self.depth > MAX_PARSE_DEPTH {
            return Err(ExprError::Syntax {
                offset: self.peek().map_or(self.src_len, |(_, o)| *o),
                message: format!("expression nested deeper than {MAX_PARSE_DEPTH}"),
            });
        }
        let mut lhs = self.term()?;
        while let Some((tok, _)) = self.peek() {
            let op = match tok {
                Token::Plus => BinOp::Add,
                Token::Minus => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some((tok, _)) = self.peek() {
            let op = match tok {
                Token::Star => BinOp::Mul,
                Token::Slash => BinOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if let Some(&(Token::Minus, offset)) = self.peek() {
            self.depth += 1;
            if self.depth > MAX_PARSE_DEPTH {
                return Err(ExprError::Syntax {
                    offset,
                    message: format!("expression nested deeper than {MAX_PARSE_DEPTH}"),
                });
            }
            self.pos += 1;
            let inner = self.unary()?;
            self.depth -= 1;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.atom()?;
        while let Some((Token::Caret, _)) = self.peek() {
            self.pos += 1;
            let rhs = self.atom()?;
            lhs = Expr::Binary(BinOp::Pow, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let (tok, offset) = self.next().ok_or_else(|| ExprError::Syntax {
            offset: self.end_offset(),
            message: "unexpected end of expression".to_string(),
        })?;
        match tok {
            Token::Num(v) => Ok(Expr::Const(v)),
            Token::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Token::Ident(name) => {
                if let Some((Token::LParen, _)) = self.peek() {
                    let func = Func::lookup(&name).ok_or_else(|| ExprError::UnknownIdentifier {
                        offset,
                        name: name.clone(),
                    })?;
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while let Some((Token::Comma, _)) = self.peek() {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect_rparen()?;
                    if args.len() != func.arity() {
                        return Err(ExprError::Syntax {
                            offset,
                            message: format!(
                                "function `{}` takes {} argument(s), got {}",
                                func.name(),
                                func.arity(),
                                args.len()
                            ),
                        });
                    }
                    Ok(Expr::Call(func, args))
                } else {
                    match self.vars.iter().position(|v| v == &name) {
                        Some(slot) => Ok(Expr::Var { name, slot }),
                        None => Err(ExprError::UnknownIdentifier { offset, name }),
                    }
                }
            }
            other => Err(ExprError::Syntax {
                offset,
                message: format!("unexpected token {other:?}"),
            }),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.next() {
            Some((Token::RParen, _)) => Ok(()),
            Some((tok, offset)) => Err(ExprError::Syntax {
                offset,
                message: format!("expected `)`, found {tok:?}"),
            }),
            None => Err(ExprError::Syntax {
                offset: self.end_offset(),
                message: "expected `)`, found end of expression".to_string(),
            }),
        }
    }
}

/// Parses `source` over the declared variable list, e.g. `["t", "x1"]`.
pub fn parse_expr(source: &str, vars: &[String]) -> Result<Expr, ExprError> {
    let tokens = Lexer::lex(source)?;
    let mut parser = Parser { tokens, pos: 0, vars, src_len: source.len(), depth: 0 };
    let expr = parser.expr()?;
    if let Some((tok, offset)) = parser.peek() {
        return Err(ExprError::Syntax {
            offset: *offset,
            message: format!("trailing input starting with {tok:?}"),
        });
    }
    Ok(expr)
}

/// Variable list for expressions over `(t, x1..xn)`.
pub fn state_vars(dim: usize) -> Vec<String> {
    let mut vars = Vec::with_capacity(dim + 1);
    vars.push("t".to_string());
    for i in 1..=dim {
        vars.push(format!("x{i}"));
    }
    vars
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vars1() -> Vec<String> {
        state_vars(1)
    }

    fn vars2() -> Vec<String> {
        state_vars(2)
    }

    #[test]
    fn parses_constant() {
        let e = parse_expr("2", &[]).unwrap();
        assert_eq!(e, Expr::Const(2.0));
    }

    #[test]
    fn parses_max_at_root() {
        let e = parse_expr("max(0, 10 - abs(x1))", &vars1()).unwrap();
        match &e {
            Expr::Call(Func::Max, args) => assert_eq!(args.len(), 2),
            other => panic!("expected max at root, got {other:?}"),
        }
    }

    #[test]
    fn one_plus_zero_t_is_one() {
        let e = parse_expr("1 + 0*t", &vars1()).unwrap();
        for t in [0.0, 0.3, 17.0, -2.5] {
            assert_eq!(e.eval(&[t, 0.0]).unwrap(), 1.0);
        }
    }

    #[test]
    fn eval_examples() {
        let sq = parse_expr("x1^2", &vars1()).unwrap();
        assert_eq!(sq.eval(&[0.0, 3.0]).unwrap(), 9.0);

        let m = parse_expr("min(t, 1-t)", &vars1()).unwrap();
        assert_eq!(m.eval(&[0.25, 0.0]).unwrap(), 0.25);

        let d = parse_expr("abs(x1-x2)", &vars2()).unwrap();
        assert_eq!(d.eval(&[0.0, 1.0, 4.0]).unwrap(), 3.0);
    }

    #[test]
    fn eval_map_matches_positional() {
        let e = parse_expr("x1^2 + exp(t) / (1 + x1)", &vars1()).unwrap();
        let mut map = BTreeMap::new();
        map.insert("t".to_string(), 0.5);
        map.insert("x1".to_string(), 2.0);
        assert_eq!(e.eval(&[0.5, 2.0]).unwrap(), e.eval_map(&map).unwrap());
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let e = parse_expr("1 / x1", &vars1()).unwrap();
        assert!(matches!(e.eval(&[0.0, 0.0]), Err(ExprError::Domain { .. })));
        assert_eq!(e.eval(&[0.0, 2.0]).unwrap(), 0.5);
    }

    #[test]
    fn sqrt_of_negative_is_an_error() {
        let e = parse_expr("sqrt(x1)", &vars1()).unwrap();
        assert!(matches!(e.eval(&[0.0, -1.0]), Err(ExprError::Domain { .. })));
    }

    #[test]
    fn pow_nan_is_an_error() {
        let e = parse_expr("(0 - 2)^x1", &vars1()).unwrap();
        assert!(matches!(e.eval(&[0.0, 0.5]), Err(ExprError::Domain { .. })));
        assert_eq!(e.eval(&[0.0, 2.0]).unwrap(), 4.0);
    }

    #[test]
    fn unknown_identifier_is_named() {
        match parse_expr("2 * y7", &vars1()) {
            Err(ExprError::UnknownIdentifier { name, offset }) => {
                assert_eq!(name, "y7");
                assert_eq!(offset, 4);
            }
            other => panic!("expected unknown identifier, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_carries_offset() {
        match parse_expr("1 + * 2", &[]) {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn unbound_variable_is_named() {
        let e = parse_expr("x1", &vars1()).unwrap();
        match e.eval(&[0.0]) {
            Err(ExprError::UnboundVariable { name }) => assert_eq!(name, "x1"),
            other => panic!("expected unbound variable, got {other:?}"),
        }
    }

    #[test]
    fn precedence_and_associativity() {
        // ^ binds tighter than unary minus.
        let e = parse_expr("-x1^2", &vars1()).unwrap();
        assert_eq!(e.eval(&[0.0, 3.0]).unwrap(), -9.0);
        // Left-associative power.
        let e = parse_expr("2^3^2", &[]).unwrap();
        assert_eq!(e.eval(&[]).unwrap(), 64.0);
        // Left-associative subtraction.
        let e = parse_expr("8 - 3 - 2", &[]).unwrap();
        assert_eq!(e.eval(&[]).unwrap(), 3.0);
        let e = parse_expr("1 + 2 * 3", &[]).unwrap();
        assert_eq!(e.eval(&[]).unwrap(), 7.0);
    }

    #[test]
    fn pathological_nesting_is_rejected_not_overflowed() {
        let deep_parens = format!("{}1{}", "(".repeat(100_000), ")".repeat(100_000));
        assert!(matches!(parse_expr(&deep_parens, &[]), Err(ExprError::Syntax { .. })));
        let deep_neg = format!("{}1", "-".repeat(100_000));
        assert!(matches!(parse_expr(&deep_neg, &[]), Err(ExprError::Syntax { .. })));
        // Depth short of the bound still parses.
        let ok = format!("{}1{}", "(".repeat(200), ")".repeat(200));
        assert!(parse_expr(&ok, &[]).is_ok());
        let negs = format!("{}1", "-".repeat(200));
        assert_eq!(parse_expr(&negs, &[]).unwrap().eval(&[]).unwrap(), 1.0);
    }

    #[test]
    fn print_reparse_examples() {
        for src in [
            "max(0, 10 - abs(x1))",
            "-x1^2",
            "(1 + t) * (2 - x1) / 4",
            "2^(3^2)",
            "-(1 + x1)",
            "1 - -x1",
            "tanh(exp(t) - sqrt(abs(x1)))",
        ] {
            let tree = parse_expr(src, &vars1()).unwrap();
            let printed = tree.to_string();
            let reparsed = parse_expr(&printed, &vars1()).unwrap();
            assert_eq!(tree, reparsed, "round-trip failed for `{src}` -> `{printed}`");
        }
    }

    fn arb_expr(vars: Vec<String>) -> impl Strategy<Value = Expr> {
        let vars_leaf = vars.clone();
        let leaf = prop_oneof![
            (0u32..1000, 0u32..100).prop_map(|(a, b)| Expr::Const(a as f64 + b as f64 / 100.0)),
            (0..vars_leaf.len()).prop_map(move |slot| Expr::Var {
                name: vars_leaf[slot].clone(),
                slot
            }),
        ];
        leaf.prop_recursive(5, 64, 4, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone(), prop_oneof![
                    Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul),
                    Just(BinOp::Div), Just(BinOp::Pow)
                ])
                    .prop_map(|(a, b, op)| Expr::Binary(op, Box::new(a), Box::new(b))),
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                inner.clone().prop_map(|a| Expr::Call(Func::Abs, vec![a])),
                inner.clone().prop_map(|a| Expr::Call(Func::Exp, vec![a])),
                inner.clone().prop_map(|a| Expr::Call(Func::Sqrt, vec![a])),
                inner.clone().prop_map(|a| Expr::Call(Func::Tanh, vec![a])),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Expr::Call(Func::Min, vec![a, b])),
                (inner.clone(), inner)
                    .prop_map(|(a, b)| Expr::Call(Func::Max, vec![a, b])),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_roundtrip(tree in arb_expr(state_vars(2))) {
            let printed = tree.to_string();
            let reparsed = parse_expr(&printed, &state_vars(2)).unwrap();
            prop_assert_eq!(tree, reparsed);
        }
    }
}
