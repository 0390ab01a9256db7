//! Closed-form coefficient fields such as `a(x)` or `p(x)`.
//!
//! The grammar is deliberately small:
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | 'x1' | 'x2' | 'pi' | func '(' expr (',' expr)* ')' | '(' expr ')'
//! func  := abs/1 | max/2 | min/2 | pow/2
//! ```

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("`{name}` expects {expected} argument(s), got {got} (position {pos})")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
        pos: usize,
    },
    #[error("division by zero at x = {x:?}")]
    DivisionByZero { x: [f64; 2] },
    #[error("non-finite value at x = {x:?}")]
    NonFinite { x: [f64; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Abs,
    Max,
    Min,
    Pow,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        match name {
            "abs" => Some((Func::Abs, 1)),
            "max" => Some((Func::Max, 2)),
            "min" => Some((Func::Min, 2)),
            "pow" => Some((Func::Pow, 2)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Coord(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed coefficient expression. Keeps its source text so descriptors
/// serialize back to what the user wrote.
#[derive(Clone)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self, ExprError> {
        let mut parser = Parser {
            src: source.as_bytes(),
            pos: 0,
        };
        let root = parser.expr()?;
        parser.skip_ws();
        if parser.pos < parser.src.len() {
            return Err(ExprError::Parse {
                pos: parser.pos,
                msg: format!("unexpected `{}`", parser.src[parser.pos] as char),
            });
        }
        Ok(Expr {
            source: source.trim().to_string(),
            root,
        })
    }

    pub fn constant(value: f64) -> Self {
        Expr {
            source: format!("{value}"),
            root: Node::Const(value),
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// `Some(c)` when the expression does not depend on the coordinates.
    pub fn as_constant(&self) -> Option<f64> {
        fn fold(node: &Node) -> Option<f64> {
            match node {
                Node::Const(c) => Some(*c),
                Node::Coord(_) => None,
                _ => eval_node(node, [0.0, 0.0]).ok().filter(|_| !uses_coords(node)),
            }
        }
        fold(&self.root)
    }

    pub fn eval(&self, x: [f64; 2]) -> Result<f64, ExprError> {
        let v = eval_node(&self.root, x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::NonFinite { x })
        }
    }
}

fn uses_coords(node: &Node) -> bool {
    match node {
        Node::Const(_) => false,
        Node::Coord(_) => true,
        Node::Neg(a) => uses_coords(a),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => uses_coords(a) || uses_coords(b),
        Node::Call(_, args) => args.iter().any(uses_coords),
    }
}

fn eval_node(node: &Node, x: [f64; 2]) -> Result<f64, ExprError> {
    Ok(match node {
        Node::Const(c) => *c,
        Node::Coord(i) => x[*i],
        Node::Neg(a) => -eval_node(a, x)?,
        Node::Add(a, b) => eval_node(a, x)? + eval_node(b, x)?,
        Node::Sub(a, b) => eval_node(a, x)? - eval_node(b, x)?,
        Node::Mul(a, b) => eval_node(a, x)? * eval_node(b, x)?,
        Node::Div(a, b) => {
            let den = eval_node(b, x)?;
            if den.abs() < 1e-300 {
                return Err(ExprError::DivisionByZero { x });
            }
            eval_node(a, x)? / den
        }
        Node::Call(f, args) => {
            let a = eval_node(&args[0], x)?;
            match f {
                Func::Abs => a.abs(),
                Func::Max => a.max(eval_node(&args[1], x)?),
                Func::Min => a.min(eval_node(&args[1], x)?),
                Func::Pow => {
                    let v = a.powf(eval_node(&args[1], x)?);
                    if !v.is_finite() {
                        return Err(ExprError::NonFinite { x });
                    }
                    v
                }
            }
        }
    })
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
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

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Expr::constant(v)),
            Raw::Text(s) => Expr::parse(&s).map_err(serde::de::Error::custom),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ExprError::Parse {
                pos: self.pos,
                msg: format!("expected `{}`", c as char),
            })
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    if rhs == Node::Const(0.0) {
                        return Err(ExprError::Parse {
                            pos: self.pos,
                            msg: "division by literal zero".into(),
                        });
                    }
                    lhs = Node::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let e = self.unary()?;
            return Ok(Node::Call(Func::Pow, vec![base, e]));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let start = {
            self.skip_ws();
            self.pos
        };
        match self.peek() {
            None => Err(ExprError::Parse {
                pos: start,
                msg: "unexpected end of input".into(),
            }),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(b')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(start),
            Some(c) if c.is_ascii_alphabetic() => {
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
                match name {
                    "x1" => return Ok(Node::Coord(0)),
                    "x2" => return Ok(Node::Coord(1)),
                    "pi" => return Ok(Node::Const(std::f64::consts::PI)),
                    _ => {}
                }
                let Some((func, arity)) = Func::lookup(name) else {
                    return Err(ExprError::UnknownIdentifier {
                        name: name.to_string(),
                        pos: start,
                    });
                };
                self.expect(b'(')?;
                let mut args = vec![self.expr()?];
                while self.peek() == Some(b',') {
                    self.pos += 1;
                    args.push(self.expr()?);
                }
                self.expect(b')')?;
                if args.len() != arity {
                    return Err(ExprError::Arity {
                        name: name.to_string(),
                        expected: arity,
                        got: args.len(),
                        pos: start,
                    });
                }
                Ok(Node::Call(func, args))
            }
            Some(c) => Err(ExprError::Parse {
                pos: start,
                msg: format!("unexpected `{}`", c as char),
            }),
        }
    }

    fn number(&mut self, start: usize) -> Result<Node, ExprError> {
        let bytes = self.src;
        let mut end = start;
        while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
            end += 1;
        }
        if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
            let mut k = end + 1;
            if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                k += 1;
            }
            if k < bytes.len() && bytes[k].is_ascii_digit() {
                while k < bytes.len() && bytes[k].is_ascii_digit() {
                    k += 1;
                }
                end = k;
            }
        }
        let text = std::str::from_utf8(&bytes[start..end]).unwrap_or("");
        let value: f64 = text.parse().map_err(|_| ExprError::Parse {
            pos: start,
            msg: format!("malformed number `{text}`"),
        })?;
        self.pos = end;
        Ok(Node::Const(value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(src: &str, x: [f64; 2]) -> f64 {
        Expr::parse(src).unwrap().eval(x).unwrap()
    }

    #[test]
    fn documented_examples() {
        assert_eq!(eval("1 + abs(x1)", [0.5, 0.0]), 1.5);
        assert_eq!(eval("max(x1, 0)", [-0.2, 0.3]), 0.0);
        assert_eq!(eval("pow(abs(x1), 0.5)", [0.25, 0.0]), 0.5);
        assert_eq!(eval("abs(x1)^0.5", [-0.25, 0.0]), 0.5);
        assert_eq!(eval("-2^2^0.5 * 2", [0.0, 0.0]), -2f64.powf(2f64.sqrt()) * 2.0);
    }

    #[test]
    fn precedence_and_unary_minus() {
        assert_eq!(eval("1 + 2 * 3 - 4 / 2", [0.0, 0.0]), 5.0);
        assert_eq!(eval("-x1 * -x2", [2.0, 3.0]), 6.0);
        assert_eq!(eval("2 * (x1 - 0.5)", [1.0, 0.0]), 1.0);
        assert_eq!(eval("1.5e-1 * 10", [0.0, 0.0]), 1.5);
        assert_eq!(eval("min(x1, x2)", [1.0, -1.0]), -1.0);
    }

    #[test]
    fn errors_carry_positions() {
        match Expr::parse("1 + foo(x1)") {
            Err(ExprError::UnknownIdentifier { name, pos }) => {
                assert_eq!(name, "foo");
                assert_eq!(pos, 4);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            Expr::parse("max(x1)"),
            Err(ExprError::Arity {
                expected: 2,
                got: 1,
                ..
            })
        ));
        assert!(matches!(Expr::parse("1 +"), Err(ExprError::Parse { pos: 3, .. })));
        assert!(matches!(Expr::parse("(1"), Err(ExprError::Parse { .. })));
        assert!(matches!(Expr::parse("x1 / 0"), Err(ExprError::Parse { .. })));
    }

    #[test]
    fn division_guard_at_evaluation() {
        let e = Expr::parse("1 / x1").unwrap();
        assert!(matches!(e.eval([0.0, 1.0]), Err(ExprError::DivisionByZero { .. })));
        assert_eq!(e.eval([2.0, 1.0]).unwrap(), 0.5);
    }

    #[test]
    fn constant_detection() {
        assert_eq!(Expr::parse("2 * 3").unwrap().as_constant(), Some(6.0));
        assert_eq!(Expr::parse("x1 + 1").unwrap().as_constant(), None);
    }

    #[test]
    fn serde_keeps_source() {
        let e: Expr = serde_json::from_str("\"max(x1, 0)\"").unwrap();
        assert_eq!(serde_json::to_string(&e).unwrap(), "\"max(x1, 0)\"");
        let c: Expr = serde_json::from_str("0.5").unwrap();
        assert_eq!(c.as_constant(), Some(0.5));
    }
}
