//! A tiny arithmetic expression language in the variables `t` and `x`.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | 't' | 'x' | 'pi' | 'e' | func '(' sum ')' | '(' sum ')'
//! func    := 'cos' | 'sin' | 'exp'
//! ```

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Cos,
    Sin,
    Exp,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Cos => "cos",
            Func::Sin => "sin",
            Func::Exp => "exp",
        }
    }

    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Cos => v.cos(),
            Func::Sin => v.sin(),
            Func::Exp => v.exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    T,
    X,
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    #[inline]
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::T => t,
            Node::X => x,
            Node::Neg(a) => -a.eval(t, x),
            Node::Bin(op, a, b) => {
                let (a, b) = (a.eval(t, x), b.eval(t, x));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => pow(a, b),
                }
            }
            Node::Call(f, a) => f.apply(a.eval(t, x)),
        }
    }

    pub fn uses_t(&self) -> bool {
        match self {
            Node::T => true,
            Node::Const(_) | Node::X => false,
            Node::Neg(a) | Node::Call(_, a) => a.uses_t(),
            Node::Bin(_, a, b) => a.uses_t() || b.uses_t(),
        }
    }

    pub fn uses_x(&self) -> bool {
        match self {
            Node::X => true,
            Node::Const(_) | Node::T => false,
            Node::Neg(a) | Node::Call(_, a) => a.uses_x(),
            Node::Bin(_, a, b) => a.uses_x() || b.uses_x(),
        }
    }

    pub fn is_constant(&self) -> bool {
        !self.uses_t() && !self.uses_x()
    }
}

#[inline]
fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(c) => write!(f, "{c:?}"),
            Node::T => f.write_str("t"),
            Node::X => f.write_str("x"),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Bin(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a} {sym} {b})")
            }
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

/// A parsed expression together with the text it came from.
#[derive(Debug, Clone)]
pub struct Expression {
    source: String,
    root: Arc<Node>,
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl Expression {
    pub fn parse(source: &str) -> Result<Self> {
        let root = Parser::new(source).parse()?;
        Ok(Self {
            source: source.trim().to_string(),
            root: Arc::new(root),
        })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            source: format!("{value:?}"),
            root: Arc::new(Node::Const(value)),
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn node(&self) -> &Node {
        &self.root
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        self.root.eval(t, x)
    }

    pub fn uses_t(&self) -> bool {
        self.root.uses_t()
    }

    pub fn uses_x(&self) -> bool {
        self.root.uses_x()
    }

    pub fn is_constant(&self) -> bool {
        self.root.is_constant()
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

struct Parser<'a> {
    src: &'a str,
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src,
            tokens: Vec::new(),
            pos: 0,
        }
    }

    fn error(&self, column: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            line: 1,
            column: column + 1,
            message: format!("in expression `{}`: {}", self.src, message.into()),
        }
    }

    fn tokenize(&mut self) -> Result<()> {
        let chars: Vec<(usize, char)> = self.src.char_indices().collect();
        let mut i = 0;
        while i < chars.len() {
            let (col, c) = chars[i];
            match c {
                ' ' | '\t' => i += 1,
                '0'..='9' | '.' => {
                    let start = i;
                    while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                        i += 1;
                    }
                    // Exponent suffix such as 1e-3.
                    if i < chars.len() && (chars[i].1 == 'e' || chars[i].1 == 'E') {
                        let mut j = i + 1;
                        if j < chars.len() && (chars[j].1 == '+' || chars[j].1 == '-') {
                            j += 1;
                        }
                        if j < chars.len() && chars[j].1.is_ascii_digit() {
                            i = j;
                            while i < chars.len() && chars[i].1.is_ascii_digit() {
                                i += 1;
                            }
                        }
                    }
                    let end = chars.get(i).map_or(self.src.len(), |&(b, _)| b);
                    let text = &self.src[chars[start].0..end];
                    let value: f64 = text
                        .parse()
                        .map_err(|_| self.error(col, format!("invalid number `{text}`")))?;
                    self.tokens.push((Token::Num(value), col));
                }
                'a'..='z' | 'A'..='Z' | '_' => {
                    let start = i;
                    while i < chars.len()
                        && (chars[i].1.is_ascii_alphanumeric() || chars[i].1 == '_')
                    {
                        i += 1;
                    }
                    let end = chars.get(i).map_or(self.src.len(), |&(b, _)| b);
                    self.tokens
                        .push((Token::Ident(self.src[chars[start].0..end].to_string()), col));
                }
                '+' | '-' | '*' | '/' | '^' => {
                    self.tokens.push((Token::Op(c), col));
                    i += 1;
                }
                '−' => {
                    self.tokens.push((Token::Op('-'), col));
                    i += 1;
                }
                '×' => {
                    self.tokens.push((Token::Op('*'), col));
                    i += 1;
                }
                '(' => {
                    self.tokens.push((Token::LParen, col));
                    i += 1;
                }
                ')' => {
                    self.tokens.push((Token::RParen, col));
                    i += 1;
                }
                other => return Err(self.error(col, format!("unexpected character `{other}`"))),
            }
        }
        Ok(())
    }

    fn parse(mut self) -> Result<Node> {
        self.tokenize()?;
        if self.tokens.is_empty() {
            return Err(self.error(0, "empty expression"));
        }
        let node = self.sum()?;
        if let Some((tok, col)) = self.tokens.get(self.pos) {
            return Err(self.error(*col, format!("unexpected token {tok:?}")));
        }
        Ok(node)
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn column(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map_or(self.src.chars().count(), |&(_, c)| c)
    }

    fn sum(&mut self) -> Result<Node> {
        let mut lhs = self.product()?;
        while let Some(Token::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.product()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(c @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if let Some(Token::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if let Some(Token::Op('+')) = self.peek() {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if let Some(Token::Op('^')) = self.peek() {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let col = self.column();
        let Some((tok, _)) = self.tokens.get(self.pos).cloned() else {
            return Err(self.error(col, "unexpected end of expression"));
        };
        self.pos += 1;
        match tok {
            Token::Num(v) => Ok(Node::Const(v)),
            Token::LParen => {
                let inner = self.sum()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Token::Ident(name) => match name.as_str() {
                "t" => Ok(Node::T),
                "x" => Ok(Node::X),
                "pi" => Ok(Node::Const(std::f64::consts::PI)),
                "e" => Ok(Node::Const(std::f64::consts::E)),
                "cos" | "sin" | "exp" => {
                    let func = match name.as_str() {
                        "cos" => Func::Cos,
                        "sin" => Func::Sin,
                        _ => Func::Exp,
                    };
                    match self.peek() {
                        Some(Token::LParen) => self.pos += 1,
                        _ => {
                            return Err(
                                self.error(self.column(), format!("expected `(` after `{name}`"))
                            )
                        }
                    }
                    let arg = self.sum()?;
                    self.expect_rparen()?;
                    Ok(Node::Call(func, Box::new(arg)))
                }
                other => Err(self.error(col, format!("unknown identifier `{other}`"))),
            },
            other => Err(self.error(col, format!("unexpected token {other:?}"))),
        }
    }

    fn expect_rparen(&mut self) -> Result<()> {
        match self.peek() {
            Some(Token::RParen) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.error(self.column(), "expected `)`")),
        }
    }
}
