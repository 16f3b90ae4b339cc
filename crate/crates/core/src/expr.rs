//! Expression strings over `q`, `p` and `t`.
//!
//! Grammar: `+ - * / ^`, parentheses, numeric literals, the constants `pi` and
//! `e`, and the functions `sin`, `cos`, `sqrt`. Evaluation is forward-mode
//! automatic differentiation, so every parsed expression carries exact first
//! derivatives with respect to all three variables.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Independent variables an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Q = 0,
    P = 1,
    T = 2,
}

/// Value together with its gradient in `(q, p, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 3],
}

impl Jet {
    pub fn constant(value: f64) -> Self {
        Self { value, grad: [0.0; 3] }
    }

    pub fn variable(var: Var, value: f64) -> Self {
        let mut grad = [0.0; 3];
        grad[var as usize] = 1.0;
        Self { value, grad }
    }

    fn chain(self, value: f64, slope: f64) -> Self {
        Self {
            value,
            grad: self.grad.map(|g| g * slope),
        }
    }

    pub fn sin(self) -> Self {
        self.chain(self.value.sin(), self.value.cos())
    }

    pub fn cos(self) -> Self {
        self.chain(self.value.cos(), -self.value.sin())
    }

    pub fn sqrt(self) -> Self {
        let r = self.value.sqrt();
        self.chain(r, 0.5 / r)
    }

    pub fn pow(self, exponent: Jet) -> Self {
        let is_const = exponent.grad.iter().all(|&g| g == 0.0);
        if is_const {
            let c = exponent.value;
            if c == 0.0 {
                return Jet::constant(1.0);
            }
            let value = if c.fract() == 0.0 && c.abs() < i32::MAX as f64 {
                self.value.powi(c as i32)
            } else {
                self.value.powf(c)
            };
            let slope = if c.fract() == 0.0 && c.abs() < i32::MAX as f64 {
                c * self.value.powi(c as i32 - 1)
            } else {
                c * self.value.powf(c - 1.0)
            };
            return self.chain(value, slope);
        }
        // a^b = exp(b ln a), requires a > 0
        let ln_a = self.value.ln();
        let value = self.value.powf(exponent.value);
        let mut grad = [0.0; 3];
        for (k, g) in grad.iter_mut().enumerate() {
            *g = value * (exponent.grad[k] * ln_a + exponent.value * self.grad[k] / self.value);
        }
        Jet { value, grad }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        let mut grad = self.grad;
        for (g, r) in grad.iter_mut().zip(rhs.grad) {
            *g += r;
        }
        Jet {
            value: self.value + rhs.value,
            grad,
        }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        self + (-rhs)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet {
            value: -self.value,
            grad: self.grad.map(|g| -g),
        }
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        let mut grad = [0.0; 3];
        for (k, g) in grad.iter_mut().enumerate() {
            *g = self.grad[k] * rhs.value + self.value * rhs.grad[k];
        }
        Jet {
            value: self.value * rhs.value,
            grad,
        }
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, rhs: Jet) -> Jet {
        let inv = 1.0 / rhs.value;
        let value = self.value * inv;
        let mut grad = [0.0; 3];
        for (k, g) in grad.iter_mut().enumerate() {
            *g = (self.grad[k] - value * rhs.grad[k]) * inv;
        }
        Jet { value, grad }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Call(Func, Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
}

impl Node {
    fn eval(&self, at: &[f64; 3]) -> Jet {
        match self {
            Node::Num(v) => Jet::constant(*v),
            Node::Var(v) => Jet::variable(*v, at[*v as usize]),
            Node::Neg(a) => -a.eval(at),
            Node::Call(f, a) => {
                let a = a.eval(at);
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Sqrt => a.sqrt(),
                }
            }
            Node::Bin(op, a, b) => {
                let (a, b) = (a.eval(at), b.eval(at));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.pow(b),
                }
            }
        }
    }

    fn uses(&self, var: Var) -> bool {
        match self {
            Node::Num(_) => false,
            Node::Var(v) => *v == var,
            Node::Neg(a) | Node::Call(_, a) => a.uses(var),
            Node::Bin(_, a, b) => a.uses(var) || b.uses(var),
        }
    }
}

/// A parsed expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self> {
        let tokens = tokenize(source)?;
        let mut parser = Parser { tokens, pos: 0 };
        let root = parser.expr()?;
        if let Some((col, tok)) = parser.tokens.get(parser.pos) {
            return Err(Error::Parse {
                column: *col,
                message: format!("unexpected token {tok}"),
            });
        }
        Ok(Self {
            source: source.trim().to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, q: f64, p: f64, t: f64) -> Jet {
        self.root.eval(&[q, p, t])
    }

    pub fn uses(&self, var: Var) -> bool {
        self.root.uses(var)
    }
}

impl fmt::Display for Expr {
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

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Num(v) => write!(f, "`{v}`"),
            Token::Ident(s) => write!(f, "`{s}`"),
            Token::Op(c) => write!(f, "`{c}`"),
            Token::LParen => f.write_str("`(`"),
            Token::RParen => f.write_str("`)`"),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<(usize, Token)>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent part, e.g. 1e-3
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
            let v = text.parse::<f64>().map_err(|_| Error::Parse {
                column: col,
                message: format!("bad number `{text}`"),
            })?;
            out.push((col, Token::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((col, Token::Ident(chars[start..i].iter().collect())));
        } else {
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Token::Op(c),
                '(' => Token::LParen,
                ')' => Token::RParen,
                _ => {
                    return Err(Error::Parse {
                        column: col,
                        message: format!("unexpected character `{c}`"),
                    })
                }
            };
            out.push((col, tok));
            i += 1;
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn column(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(c, _)| *c)
            .or_else(|| self.tokens.last().map(|(c, _)| c + 1))
            .unwrap_or(1)
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            column: self.column(),
            message: message.into(),
        })
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek() {
            Some(Token::Op('-')) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(Token::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if let Some(Token::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let Some(tok) = self.peek().cloned() else {
            return self.fail("unexpected end of expression");
        };
        match tok {
            Token::Num(v) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Token::LParen => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(&Token::RParen) {
                    return self.fail("expected `)`");
                }
                self.pos += 1;
                Ok(inner)
            }
            Token::Ident(name) => {
                let column = self.column();
                self.pos += 1;
                let func = match name.as_str() {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "sqrt" => Some(Func::Sqrt),
                    _ => None,
                };
                if let Some(func) = func {
                    if self.peek() != Some(&Token::LParen) {
                        return self.fail(format!("expected `(` after `{name}`"));
                    }
                    self.pos += 1;
                    let arg = self.expr()?;
                    if self.peek() != Some(&Token::RParen) {
                        return self.fail("expected `)`");
                    }
                    self.pos += 1;
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                match name.as_str() {
                    "q" => Ok(Node::Var(Var::Q)),
                    "p" => Ok(Node::Var(Var::P)),
                    "t" => Ok(Node::Var(Var::T)),
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    "e" => Ok(Node::Num(std::f64::consts::E)),
                    "i" | "I" | "j" => Err(Error::Unsupported(format!(
                        "complex coefficients (`{name}` at column {column}); only real-valued expressions are accepted"
                    ))),
                    _ => Err(Error::Parse {
                        column,
                        message: format!("unknown identifier `{name}`"),
                    }),
                }
            }
            other => self.fail(format!("unexpected token {other}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12 * (1.0 + b.abs())
    }

    #[test]
    fn precedence_and_associativity() {
        let e = Expr::parse("1 + 2*3^2 - 4/2").unwrap();
        assert!(close(e.eval(0.0, 0.0, 0.0).value, 17.0));
        let e = Expr::parse("2^3^2").unwrap();
        assert!(close(e.eval(0.0, 0.0, 0.0).value, 512.0));
        let e = Expr::parse("-q^2").unwrap();
        assert!(close(e.eval(3.0, 0.0, 0.0).value, -9.0));
    }

    #[test]
    fn gradients_of_spin_observable() {
        let e = Expr::parse("sqrt(1 - q^2)*cos(p)").unwrap();
        let (q, p) = (0.3, 0.7);
        let j = e.eval(q, p, 0.0);
        let s = (1.0 - q * q).sqrt();
        assert!(close(j.value, s * p.cos()));
        assert!(close(j.grad[0], -q / s * p.cos()));
        assert!(close(j.grad[1], -s * p.sin()));
        assert_eq!(j.grad[2], 0.0);
    }

    #[test]
    fn time_drive_with_constants() {
        let e = Expr::parse("0.5*(cos(e*t/2) + cos(pi*t/2))").unwrap();
        let t = 1.3;
        let j = e.eval(0.0, 0.0, t);
        let (e1, pi) = (std::f64::consts::E, std::f64::consts::PI);
        assert!(close(j.value, 0.5 * ((e1 * t / 2.0).cos() + (pi * t / 2.0).cos())));
        let d = -0.25 * (e1 * (e1 * t / 2.0).sin() + pi * (pi * t / 2.0).sin());
        assert!(close(j.grad[2], d));
        assert!(e.uses(Var::T) && !e.uses(Var::Q));
    }

    #[test]
    fn scientific_literals() {
        let e = Expr::parse("1e-2*q^4/4").unwrap();
        assert!(close(e.eval(2.0, 0.0, 0.0).value, 0.04));
        assert!(close(e.eval(2.0, 0.0, 0.0).grad[0], 0.08));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Expr::parse("q +"), Err(Error::Parse { .. })));
        assert!(matches!(Expr::parse("foo(q)"), Err(Error::Parse { .. })));
        assert!(matches!(Expr::parse("(q"), Err(Error::Parse { .. })));
        assert!(matches!(Expr::parse("q $ p"), Err(Error::Parse { column: 3, .. })));
        assert!(matches!(Expr::parse("q*i"), Err(Error::Unsupported(_))));
    }
}
