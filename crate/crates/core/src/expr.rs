//! Closed-form coefficient expressions.
//!
//! Grammar: numbers, `+ - * /`, unary minus, parentheses, `exp(..)`,
//! `sin(..)`, `abs(..)` or `|..|`, the constant `pi`, and the coordinates
//! `y`, `x1` .. `xn`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Y,
    X(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Exp(Box<Node>),
    Sin(Box<Node>),
    Abs(Box<Node>),
}

impl Node {
    fn eval(&self, y: f64, x: &[f64]) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::Y => y,
            Node::X(k) => x[*k],
            Node::Neg(a) => -a.eval(y, x),
            Node::Add(a, b) => a.eval(y, x) + b.eval(y, x),
            Node::Sub(a, b) => a.eval(y, x) - b.eval(y, x),
            Node::Mul(a, b) => a.eval(y, x) * b.eval(y, x),
            Node::Div(a, b) => a.eval(y, x) / b.eval(y, x),
            Node::Exp(a) => a.eval(y, x).exp(),
            Node::Sin(a) => a.eval(y, x).sin(),
            Node::Abs(a) => a.eval(y, x).abs(),
        }
    }

    fn depends_on_coords(&self) -> bool {
        match self {
            Node::Num(_) => false,
            Node::Y | Node::X(_) => true,
            Node::Neg(a) | Node::Exp(a) | Node::Sin(a) | Node::Abs(a) => a.depends_on_coords(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => a.depends_on_coords() || b.depends_on_coords(),
        }
    }
}

/// A parsed expression in `y` and `x1..xn`.
#[derive(Clone)]
pub struct Expr {
    source: Arc<str>,
    root: Arc<Node>,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", &*self.source)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl Expr {
    /// Parses `src`, accepting coordinates `x1..x{dim}`.
    pub fn parse(src: &str, dim: usize) -> Result<Self> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0, dim };
        let root = p.expr()?;
        if let Some(t) = p.tokens.get(p.pos) {
            return Err(Error::Expr { column: t.col, message: format!("unexpected `{}`", t.kind) });
        }
        Ok(Self { source: src.into(), root: Arc::new(root) })
    }

    pub fn constant(v: f64) -> Self {
        Self { source: format!("{v}").into(), root: Arc::new(Node::Num(v)) }
    }

    pub fn eval(&self, y: f64, x: &[f64]) -> f64 {
        self.root.eval(y, x)
    }

    /// Value when the expression has no coordinate dependence.
    pub fn as_constant(&self) -> Option<f64> {
        (!self.root.depends_on_coords()).then(|| self.root.eval(0.0, &[]))
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Bar,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "{v}"),
            Tok::Ident(s) => f.write_str(s),
            Tok::Plus => f.write_str("+"),
            Tok::Minus => f.write_str("-"),
            Tok::Star => f.write_str("*"),
            Tok::Slash => f.write_str("/"),
            Tok::LParen => f.write_str("("),
            Tok::RParen => f.write_str(")"),
            Tok::Bar => f.write_str("|"),
        }
    }
}

struct Token {
    kind: Tok,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        let single = match c {
            '+' => Some(Tok::Plus),
            '-' | '\u{2212}' => Some(Tok::Minus),
            '*' | '\u{d7}' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '|' => Some(Tok::Bar),
            _ => None,
        };
        if let Some(kind) = single {
            out.push(Token { kind, col });
            i += 1;
        } else if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text.parse::<f64>().map_err(|_| Error::Expr { column: col, message: format!("bad number `{text}`") })?;
            out.push(Token { kind: Tok::Num(v), col });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token { kind: Tok::Ident(chars[start..i].iter().collect()), col });
        } else {
            return Err(Error::Expr { column: col, message: format!("unexpected character `{c}`") });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    dim: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn column(&self) -> usize {
        self.tokens.get(self.pos).map(|t| t.col).unwrap_or_else(|| self.tokens.last().map_or(1, |t| t.col + 1))
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Expr { column: self.column(), message: message.into() })
    }

    fn expect(&mut self, tok: Tok) -> Result<()> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(format!("expected `{tok}`"))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek() {
            Some(Tok::Minus) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Plus) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Node> {
        let Some(tok) = self.peek().cloned() else {
            return self.fail("unexpected end of expression");
        };
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::Bar => {
                let inner = self.expr()?;
                self.expect(Tok::Bar)?;
                Ok(Node::Abs(Box::new(inner)))
            }
            Tok::Ident(name) => self.ident(&name),
            other => {
                self.pos -= 1;
                self.fail(format!("unexpected `{other}`"))
            }
        }
    }

    fn ident(&mut self, name: &str) -> Result<Node> {
        match name {
            "y" => Ok(Node::Y),
            "pi" => Ok(Node::Num(std::f64::consts::PI)),
            "exp" | "sin" | "abs" => {
                self.expect(Tok::LParen)?;
                let arg = Box::new(self.expr()?);
                self.expect(Tok::RParen)?;
                Ok(match name {
                    "exp" => Node::Exp(arg),
                    "sin" => Node::Sin(arg),
                    _ => Node::Abs(arg),
                })
            }
            _ => {
                if let Some(k) = name.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
                    if k >= 1 && k <= self.dim {
                        return Ok(Node::X(k - 1));
                    }
                    self.pos -= 1;
                    return self.fail(format!("coordinate `{name}` out of range for dimension {}", self.dim));
                }
                self.pos -= 1;
                self.fail(format!("unknown identifier `{name}`"))
            }
        }
    }
}
