//! Arithmetic expressions over chart coordinates.
//!
//! Grammar: `+ - * / ^`, unary minus, parentheses, decimal literals, the
//! constant `pi`, the variables `x`/`theta` and `y`/`phi`, and the functions
//! `sin cos tan exp log sqrt abs`. Constant subtrees are folded at parse time.

use crate::error::{Error, Result};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tan => v.tan(),
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::Sqrt => v.sqrt(),
            Func::Abs => v.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    X,
    Y,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::X => x,
            Node::Y => y,
            Node::Neg(a) => -a.eval(x, y),
            Node::Add(a, b) => a.eval(x, y) + b.eval(x, y),
            Node::Sub(a, b) => a.eval(x, y) - b.eval(x, y),
            Node::Mul(a, b) => a.eval(x, y) * b.eval(x, y),
            Node::Div(a, b) => a.eval(x, y) / b.eval(x, y),
            Node::Pow(a, b) => {
                let base = a.eval(x, y);
                match **b {
                    Node::Num(e) if e.fract() == 0.0 && e.abs() <= 64.0 => base.powi(e as i32),
                    _ => base.powf(b.eval(x, y)),
                }
            }
            Node::Call(f, a) => f.apply(a.eval(x, y)),
        }
    }

    fn uses(&self, var: &Node) -> bool {
        match self {
            Node::Num(_) => false,
            Node::X | Node::Y => self == var,
            Node::Neg(a) | Node::Call(_, a) => a.uses(var),
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::Mul(a, b)
            | Node::Div(a, b)
            | Node::Pow(a, b) => a.uses(var) || b.uses(var),
        }
    }

    fn fold(self) -> Node {
        let is_const = !self.uses(&Node::X) && !self.uses(&Node::Y);
        if is_const && !matches!(self, Node::Num(_)) {
            Node::Num(self.eval(0.0, 0.0))
        } else {
            self
        }
    }
}

/// A parsed expression in two chart variables.
#[derive(Clone, PartialEq)]
pub struct Expr {
    root: Node,
    source: String,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self> {
        let tokens = tokenize(source)?;
        let mut parser = Parser { tokens, pos: 0 };
        let root = parser.expr()?;
        if parser.pos != parser.tokens.len() {
            return Err(Error::Expression(format!(
                "unexpected token {:?} in {source:?}",
                parser.tokens[parser.pos]
            )));
        }
        Ok(Self { root, source: source.to_string() })
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.root.eval(x, y)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Value of the expression if it does not depend on any variable.
    pub fn constant(&self) -> Option<f64> {
        match self.root {
            Node::Num(v) => Some(v),
            _ => None,
        }
    }

    pub fn uses_x(&self) -> bool {
        self.root.uses(&Node::X)
    }

    pub fn uses_y(&self) -> bool {
        self.root.uses(&Node::Y)
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

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
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
            let v = text
                .parse::<f64>()
                .map_err(|_| Error::Expression(format!("bad number {text:?}")))?;
            out.push(Token::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else if c == '(' {
            out.push(Token::LParen);
            i += 1;
        } else if c == ')' {
            out.push(Token::RParen);
            i += 1;
        } else {
            return Err(Error::Expression(format!("unexpected character {c:?} in {src:?}")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            }
            .fold();
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Div(Box::new(lhs), Box::new(rhs))
            }
            .fold();
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek() {
            Some(Token::Op('-')) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)).fold())
            }
            Some(Token::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    // `^` is right-associative and binds tighter than unary minus on its left.
    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if let Some(Token::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)).fold());
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.next() {
            Some(Token::Num(v)) => Ok(Node::Num(v)),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                match self.next() {
                    Some(Token::RParen) => Ok(inner),
                    other => Err(Error::Expression(format!("expected ')', found {other:?}"))),
                }
            }
            Some(Token::Ident(name)) => match name.as_str() {
                "x" | "theta" => Ok(Node::X),
                "y" | "phi" => Ok(Node::Y),
                "pi" => Ok(Node::Num(std::f64::consts::PI)),
                _ => {
                    let func = Func::from_name(&name)
                        .ok_or_else(|| Error::Expression(format!("unknown identifier {name:?}")))?;
                    match self.next() {
                        Some(Token::LParen) => {}
                        other => {
                            return Err(Error::Expression(format!(
                                "expected '(' after {name}, found {other:?}"
                            )))
                        }
                    }
                    let arg = self.expr()?;
                    match self.next() {
                        Some(Token::RParen) => Ok(Node::Call(func, Box::new(arg)).fold()),
                        other => Err(Error::Expression(format!("expected ')', found {other:?}"))),
                    }
                }
            },
            other => Err(Error::Expression(format!("unexpected token {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn precedence_and_functions() {
        let e = Expr::parse("1 + 0.5*cos(2*pi*x)").unwrap();
        assert!((e.eval(0.0, 7.0) - 1.5).abs() < 1e-15);
        assert!((e.eval(0.5, 0.0) - 0.5).abs() < 1e-15);
        assert!(!e.uses_y());

        let e = Expr::parse("-x^2 + 2^3^2").unwrap();
        assert_eq!(e.eval(3.0, 0.0), -9.0 + 512.0);

        let e = Expr::parse("sin(theta) - 0.2*sin(theta)^9").unwrap();
        let t: f64 = 0.7;
        assert!((e.eval(t, 0.0) - (t.sin() - 0.2 * t.sin().powi(9))).abs() < 1e-15);

        let e = Expr::parse("exp(-y) * 1e-1 + 2.5E+1").unwrap();
        assert!((e.eval(0.0, 0.0) - 25.1).abs() < 1e-12);
    }

    #[test]
    fn constants_are_folded() {
        assert_eq!(Expr::parse("2*pi/2").unwrap().constant(), Some(PI));
        assert_eq!(Expr::parse("1").unwrap().constant(), Some(1.0));
        assert_eq!(Expr::parse("x*0").unwrap().constant(), None);
    }

    #[test]
    fn rejects_garbage() {
        for bad in ["1 +", "foo(x)", "sin x", "(1", "1 $ 2", "z"] {
            assert!(Expr::parse(bad).is_err(), "{bad}");
        }
    }
}
