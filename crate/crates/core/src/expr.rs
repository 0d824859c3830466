//! Coefficient expressions in the single variable `a`.
//!
//! Grammar, lowest to highest precedence:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' '-'? INTEGER)*
//! atom    := NUMBER | 'a' | FUNC '(' sum ')' | '(' sum ')'
//! FUNC    := exp | sqrt | sin | cos
//! ```
//!
//! `^` binds tighter than unary minus, so `-a^2` is `-(a^2)`, and unary minus
//! binds tighter than `*`, so `2*a - -a` is `2a + a`. Equal-precedence
//! operators associate to the left.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Sqrt,
    Sin,
    Cos,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            _ => return None,
        })
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Exp => x.exp(),
            Func::Sqrt => x.sqrt(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
        }
    }
}

/// Expression tree. Literals are always non-negative; negation is explicit.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

impl Expr {
    #[inline]
    pub fn eval(&self, a: f64) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var => a,
            Expr::Neg(e) => -e.eval(a),
            Expr::Add(l, r) => l.eval(a) + r.eval(a),
            Expr::Sub(l, r) => l.eval(a) - r.eval(a),
            Expr::Mul(l, r) => l.eval(a) * r.eval(a),
            Expr::Div(l, r) => l.eval(a) / r.eval(a),
            Expr::Pow(b, k) => b.eval(a).powi(*k),
            Expr::Call(f, e) => f.apply(e.eval(a)),
        }
    }

    /// Symbolic derivative with respect to `a`, with light constant folding.
    pub fn derivative(&self) -> Expr {
        use Expr::*;
        match self {
            Const(_) => Const(0.0),
            Var => Const(1.0),
            Neg(e) => neg(e.derivative()),
            Add(l, r) => add(l.derivative(), r.derivative()),
            Sub(l, r) => sub(l.derivative(), r.derivative()),
            Mul(l, r) => add(
                mul(l.derivative(), (**r).clone()),
                mul((**l).clone(), r.derivative()),
            ),
            Div(l, r) => div(
                sub(
                    mul(l.derivative(), (**r).clone()),
                    mul((**l).clone(), r.derivative()),
                ),
                pow((**r).clone(), 2),
            ),
            Pow(b, k) => {
                if *k == 0 {
                    return Const(0.0);
                }
                let outer = if *k == 1 {
                    Const(1.0)
                } else {
                    mul(Const(*k as f64), pow((**b).clone(), k - 1))
                };
                mul(outer, b.derivative())
            }
            Call(f, e) => {
                let inner = e.derivative();
                let outer = match f {
                    Func::Exp => Call(Func::Exp, e.clone()),
                    Func::Sqrt => div(Const(1.0), mul(Const(2.0), Call(Func::Sqrt, e.clone()))),
                    Func::Sin => Call(Func::Cos, e.clone()),
                    Func::Cos => neg(Call(Func::Sin, e.clone())),
                };
                mul(outer, inner)
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Const(_) => true,
            Expr::Var => false,
            Expr::Neg(e) | Expr::Pow(e, _) | Expr::Call(_, e) => e.is_constant(),
            Expr::Add(l, r) | Expr::Sub(l, r) | Expr::Mul(l, r) | Expr::Div(l, r) => {
                l.is_constant() && r.is_constant()
            }
        }
    }

    fn fmt_atom(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(_) | Expr::Var | Expr::Call(..) => write!(f, "{self}"),
            _ => write!(f, "({self})"),
        }
    }
}

fn neg(e: Expr) -> Expr {
    match e {
        Expr::Const(c) if c == 0.0 => Expr::Const(0.0),
        e => Expr::Neg(Box::new(e)),
    }
}

fn add(l: Expr, r: Expr) -> Expr {
    match (l, r) {
        (Expr::Const(a), r) if a == 0.0 => r,
        (l, Expr::Const(b)) if b == 0.0 => l,
        (l, r) => Expr::Add(Box::new(l), Box::new(r)),
    }
}

fn sub(l: Expr, r: Expr) -> Expr {
    match (l, r) {
        (l, Expr::Const(b)) if b == 0.0 => l,
        (Expr::Const(a), r) if a == 0.0 => neg(r),
        (l, r) => Expr::Sub(Box::new(l), Box::new(r)),
    }
}

fn mul(l: Expr, r: Expr) -> Expr {
    match (l, r) {
        (Expr::Const(a), _) | (_, Expr::Const(a)) if a == 0.0 => Expr::Const(0.0),
        (Expr::Const(a), r) if a == 1.0 => r,
        (l, Expr::Const(b)) if b == 1.0 => l,
        (l, r) => Expr::Mul(Box::new(l), Box::new(r)),
    }
}

fn div(l: Expr, r: Expr) -> Expr {
    match (l, r) {
        (Expr::Const(a), _) if a == 0.0 => Expr::Const(0.0),
        (l, r) => Expr::Div(Box::new(l), Box::new(r)),
    }
}

fn pow(b: Expr, k: i32) -> Expr {
    match k {
        0 => Expr::Const(1.0),
        1 => b,
        _ => Expr::Pow(Box::new(b), k),
    }
}

/// Fully parenthesised rendering; re-parsing reproduces the tree exactly.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var => write!(f, "a"),
            Expr::Neg(e) => {
                write!(f, "-")?;
                e.fmt_atom(f)
            }
            Expr::Add(l, r) => {
                l.fmt_atom(f)?;
                write!(f, " + ")?;
                r.fmt_atom(f)
            }
            Expr::Sub(l, r) => {
                l.fmt_atom(f)?;
                write!(f, " - ")?;
                r.fmt_atom(f)
            }
            Expr::Mul(l, r) => {
                l.fmt_atom(f)?;
                write!(f, " * ")?;
                r.fmt_atom(f)
            }
            Expr::Div(l, r) => {
                l.fmt_atom(f)?;
                write!(f, " / ")?;
                r.fmt_atom(f)
            }
            Expr::Pow(b, k) => {
                b.fmt_atom(f)?;
                write!(f, "^{k}")
            }
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
        }
    }
}

/// A parsed coefficient together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientExpr {
    pub source: String,
    pub ast: Expr,
}

impl CoefficientExpr {
    pub fn constant(c: f64) -> Self {
        let ast = if c < 0.0 {
            Expr::Neg(Box::new(Expr::Const(-c)))
        } else {
            Expr::Const(c)
        };
        Self { source: ast.to_string(), ast }
    }

    #[inline]
    pub fn eval(&self, a: f64) -> f64 {
        self.ast.eval(a)
    }

    pub fn derivative(&self) -> CoefficientExpr {
        let ast = self.ast.derivative();
        Self { source: ast.to_string(), ast }
    }
}

impl std::str::FromStr for CoefficientExpr {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_coefficient(s)
    }
}

pub fn parse_coefficient(source: &str) -> Result<CoefficientExpr, ParseError> {
    let tokens = lex(source)?;
    let mut p = Parser { tokens, pos: 0, len: source.len() };
    if p.tokens.is_empty() {
        return Err(ParseError::Syntax { offset: 0, message: "empty expression".into() });
    }
    let ast = p.sum()?;
    if let Some(t) = p.peek() {
        return Err(ParseError::Syntax {
            offset: t.offset,
            message: format!("unexpected {}", t.kind.describe()),
        });
    }
    Ok(CoefficientExpr { source: source.to_string(), ast })
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Num(f64),
    Int(i32),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl Kind {
    fn describe(&self) -> String {
        match self {
            Kind::Num(x) => format!("number {x}"),
            Kind::Int(k) => format!("number {k}"),
            Kind::Ident(s) => format!("identifier `{s}`"),
            Kind::Op(c) => format!("operator `{c}`"),
            Kind::LParen => "`(`".into(),
            Kind::RParen => "`)`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: Kind,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                out.push(Token { kind: Kind::Op(c as char), offset: i });
                i += 1;
            }
            b'(' => {
                out.push(Token { kind: Kind::LParen, offset: i });
                i += 1;
            }
            b')' => {
                out.push(Token { kind: Kind::RParen, offset: i });
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                let mut integral = true;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    if bytes[i] == b'.' {
                        integral = false;
                    }
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        integral = false;
                        i = j;
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                let kind = match (integral, text.parse::<i32>()) {
                    (true, Ok(k)) => Kind::Int(k),
                    _ => Kind::Num(value),
                };
                out.push(Token { kind, offset: start });
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token { kind: Kind::Ident(src[start..i].to_string()), offset: start });
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    offset: i,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some(Token { kind: Kind::Op(c), .. }) => Some(*c),
            _ => None,
        }
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.len, |t| t.offset)
    }

    fn eof(&self, what: &str) -> ParseError {
        ParseError::Syntax { offset: self.len, message: format!("unexpected end of input, expected {what}") }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.product()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let mut base = self.atom()?;
        while self.peek_op() == Some('^') {
            self.pos += 1;
            let negative = if self.peek_op() == Some('-') {
                self.pos += 1;
                true
            } else {
                false
            };
            let offset = self.offset();
            match self.peek().map(|t| t.kind.clone()) {
                Some(Kind::Int(k)) => {
                    self.pos += 1;
                    base = Expr::Pow(Box::new(base), if negative { -k } else { k });
                }
                Some(other) => {
                    return Err(ParseError::Syntax {
                        offset,
                        message: format!("exponent must be an integer literal, found {}", other.describe()),
                    })
                }
                None => return Err(self.eof("integer exponent")),
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.eof("operand"));
        };
        self.pos += 1;
        match tok.kind {
            Kind::Num(x) => Ok(Expr::Const(x)),
            Kind::Int(k) => Ok(Expr::Const(k as f64)),
            Kind::LParen => {
                let inner = self.sum()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Kind::Ident(name) => {
                if name == "a" {
                    return Ok(Expr::Var);
                }
                let Some(func) = Func::from_name(&name) else {
                    return Err(ParseError::UnknownIdentifier { name, offset: tok.offset });
                };
                match self.peek() {
                    Some(Token { kind: Kind::LParen, .. }) => self.pos += 1,
                    Some(t) => {
                        return Err(ParseError::Syntax {
                            offset: t.offset,
                            message: format!("expected `(` after `{name}`"),
                        })
                    }
                    None => return Err(self.eof("`(`")),
                }
                let arg = self.sum()?;
                self.expect_rparen()?;
                Ok(Expr::Call(func, Box::new(arg)))
            }
            other => Err(ParseError::Syntax {
                offset: tok.offset,
                message: format!("unexpected {}", other.describe()),
            }),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Some(Token { kind: Kind::RParen, .. }) => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(ParseError::Syntax {
                offset: t.offset,
                message: format!("expected `)`, found {}", t.kind.describe()),
            }),
            None => Err(self.eof("`)`")),
        }
    }
}
