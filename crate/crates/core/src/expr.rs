//! A small arithmetic expression language used to define fields, outputs,
//! certificates and feedback laws from configuration files.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | '+' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | variable | 'pi' | func '(' sum ')' | '(' sum ')'
//! func    := sin | cos | exp | ln | abs | sqrt
//! ```
//!
//! `-x1^3` parses as `-(x1^3)` and `^` is right-associative. Integer literal
//! exponents are evaluated with repeated multiplication so negative bases stay
//! finite.
//!
//! Besides plain evaluation, [`Expr::eval_grad`] runs forward-mode automatic
//! differentiation, which gives exact gradients for expression-defined
//! certificates without any symbolic manipulation.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message} at column {column}")]
pub struct ParseError {
    pub message: String,
    /// 1-based character column inside the expression source.
    pub column: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Abs,
    Sqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Ln => v.ln(),
            Func::Abs => v.abs(),
            Func::Sqrt => v.sqrt(),
        }
    }

    fn derivative(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.cos(),
            Func::Cos => -v.sin(),
            Func::Exp => v.exp(),
            Func::Ln => 1.0 / v,
            Func::Abs => {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Func::Sqrt => 0.5 / v.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
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
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    /// Integer power, evaluated by `powi`.
    PowI(Box<Node>, i32),
    Call(Func, Box<Node>),
}

/// A parsed expression over a fixed, ordered list of variable names.
#[derive(Clone, PartialEq)]
pub struct Expr {
    source: String,
    vars: Vec<String>,
    root: Node,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Expr")
            .field("source", &self.source)
            .field("vars", &self.vars)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
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
            let value = text.parse::<f64>().map_err(|_| ParseError {
                message: format!("malformed number `{text}`"),
                column: col,
            })?;
            out.push((Tok::Num(value), col));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), col));
        } else if "+-*/^".contains(c) {
            out.push((Tok::Op(c), col));
            i += 1;
        } else if c == '−' {
            // U+2212 minus sign, common when formulas are pasted from documents
            out.push((Tok::Op('-'), col));
            i += 1;
        } else if c == '(' {
            out.push((Tok::LParen, col));
            i += 1;
        } else if c == ')' {
            out.push((Tok::RParen, col));
            i += 1;
        } else {
            return Err(ParseError {
                message: format!("unexpected character `{c}`"),
                column: col,
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    vars: &'a [String],
    end_col: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |(_, c)| *c)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            message: message.into(),
            column: self.col(),
        })
    }

    fn sum(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.product()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek() {
            let op = if *op == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek() {
            let op = if *op == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exponent = self.unary()?;
            if let Some(n) = integer_literal(&exponent) {
                return Ok(Node::PowI(Box::new(base), n));
            }
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        let col = self.col();
        let Some(tok) = self.peek().cloned() else {
            return self.err("unexpected end of expression");
        };
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::LParen => {
                let inner = self.sum()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if let Some(func) = Func::from_name(&name) {
                    if self.peek() != Some(&Tok::LParen) {
                        return self.err(format!("expected `(` after `{name}`"));
                    }
                    self.pos += 1;
                    let arg = self.sum()?;
                    self.expect_rparen()?;
                    Ok(Node::Call(func, Box::new(arg)))
                } else if name == "pi" {
                    Ok(Node::Num(std::f64::consts::PI))
                } else if let Some(idx) = self.vars.iter().position(|v| *v == name) {
                    Ok(Node::Var(idx))
                } else {
                    Err(ParseError {
                        message: format!(
                            "unknown variable `{name}` (expected one of: {})",
                            self.vars.join(", ")
                        ),
                        column: col,
                    })
                }
            }
            Tok::Op(c) => Err(ParseError {
                message: format!("unexpected operator `{c}`"),
                column: col,
            }),
            Tok::RParen => Err(ParseError {
                message: "unexpected `)`".into(),
                column: col,
            }),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        if self.peek() == Some(&Tok::RParen) {
            self.pos += 1;
            Ok(())
        } else {
            self.err("expected `)`")
        }
    }
}

fn integer_literal(node: &Node) -> Option<i32> {
    let value = match node {
        Node::Num(v) => *v,
        Node::Neg(inner) => match inner.as_ref() {
            Node::Num(v) => -*v,
            _ => return None,
        },
        _ => return None,
    };
    (value.fract() == 0.0 && value.abs() <= 64.0).then_some(value as i32)
}

impl Expr {
    /// Parses `source` with the given ordered variable names. Values passed to
    /// [`Expr::eval`] follow the same order.
    pub fn parse(source: &str, vars: &[&str]) -> Result<Self, ParseError> {
        let vars: Vec<String> = vars.iter().map(|v| v.to_string()).collect();
        let toks = tokenize(source)?;
        let mut parser = Parser {
            toks,
            pos: 0,
            vars: &vars,
            end_col: source.chars().count() + 1,
        };
        let root = parser.sum()?;
        if parser.pos != parser.toks.len() {
            return parser.err("unexpected trailing input");
        }
        Ok(Self {
            source: source.to_string(),
            vars,
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    /// True when the variable `name` occurs in the expression.
    pub fn uses(&self, name: &str) -> bool {
        let Some(idx) = self.vars.iter().position(|v| v == name) else {
            return false;
        };
        fn walk(node: &Node, idx: usize) -> bool {
            match node {
                Node::Num(_) => false,
                Node::Var(i) => *i == idx,
                Node::Neg(a) | Node::PowI(a, _) | Node::Call(_, a) => walk(a, idx),
                Node::Bin(_, a, b) => walk(a, idx) || walk(b, idx),
            }
        }
        walk(&self.root, idx)
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.vars.len());
        eval_node(&self.root, values)
    }

    /// Evaluates the expression and writes its gradient with respect to the
    /// first `grad.len()` variables into `grad`.
    pub fn eval_grad(&self, values: &[f64], grad: &mut [f64]) -> f64 {
        let (v, d) = dual_node(&self.root, values, grad.len());
        grad.copy_from_slice(&d);
        v
    }
}

fn eval_node(node: &Node, vals: &[f64]) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Var(i) => vals[*i],
        Node::Neg(a) => -eval_node(a, vals),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval_node(a, vals), eval_node(b, vals));
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a / b,
                BinOp::Pow => a.powf(b),
            }
        }
        Node::PowI(a, n) => eval_node(a, vals).powi(*n),
        Node::Call(f, a) => f.apply(eval_node(a, vals)),
    }
}

fn dual_node(node: &Node, vals: &[f64], n: usize) -> (f64, Vec<f64>) {
    match node {
        Node::Num(v) => (*v, vec![0.0; n]),
        Node::Var(i) => {
            let mut d = vec![0.0; n];
            if *i < n {
                d[*i] = 1.0;
            }
            (vals[*i], d)
        }
        Node::Neg(a) => {
            let (v, mut d) = dual_node(a, vals, n);
            d.iter_mut().for_each(|x| *x = -*x);
            (-v, d)
        }
        Node::Bin(op, a, b) => {
            let (av, ad) = dual_node(a, vals, n);
            let (bv, bd) = dual_node(b, vals, n);
            let combine = |ca: f64, cb: f64| -> Vec<f64> {
                ad.iter().zip(&bd).map(|(x, y)| ca * x + cb * y).collect()
            };
            match op {
                BinOp::Add => (av + bv, combine(1.0, 1.0)),
                BinOp::Sub => (av - bv, combine(1.0, -1.0)),
                BinOp::Mul => (av * bv, combine(bv, av)),
                BinOp::Div => (av / bv, combine(1.0 / bv, -av / (bv * bv))),
                BinOp::Pow => {
                    let v = av.powf(bv);
                    let ca = if av == 0.0 { 0.0 } else { bv * av.powf(bv - 1.0) };
                    let cb = if bd.iter().all(|x| *x == 0.0) { 0.0 } else { v * av.ln() };
                    (v, combine(ca, cb))
                }
            }
        }
        Node::PowI(a, k) => {
            let (av, mut ad) = dual_node(a, vals, n);
            let c = if *k == 0 { 0.0 } else { f64::from(*k) * av.powi(*k - 1) };
            ad.iter_mut().for_each(|x| *x *= c);
            (av.powi(*k), ad)
        }
        Node::Call(f, a) => {
            let (av, mut ad) = dual_node(a, vals, n);
            let c = f.derivative(av);
            ad.iter_mut().for_each(|x| *x *= c);
            (f.apply(av), ad)
        }
    }
}

/// Variable names `x1..xn` followed by `t`, the layout used for field and
/// certificate expressions.
pub fn state_vars(dim: usize) -> Vec<String> {
    let mut v: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    v.push("t".into());
    v
}

/// Parses an expression over `x1..xn, t`.
pub fn parse_state_expr(source: &str, dim: usize) -> Result<Expr, ParseError> {
    let names = state_vars(dim);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Expr::parse(source, &refs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, x: &[f64]) -> f64 {
        parse_state_expr(src, x.len() - 1).unwrap().eval(x)
    }

    #[test]
    fn precedence_and_unary_minus() {
        assert_eq!(ev("-x1^3 + x2^3", &[2.0, 1.0, 0.0]), -7.0);
        assert_eq!(ev("2^3^2", &[0.0, 0.0]), 512.0);
        assert_eq!(ev("1 - 2 - 3", &[0.0, 0.0]), -4.0);
        assert_eq!(ev("8 / 2 / 2", &[0.0, 0.0]), 2.0);
        assert_eq!(ev("2*-x1", &[3.0, 0.0]), -6.0);
        assert_eq!(ev("x1^-1", &[4.0, 0.0]), 0.25);
    }

    #[test]
    fn negative_base_integer_power_is_finite() {
        assert_eq!(ev("x1^3", &[-2.0, 0.0]), -8.0);
        assert_eq!(ev("(-x1)^2", &[-3.0, 0.0]), 9.0);
    }

    #[test]
    fn functions_and_time() {
        let v = ev("sin(t)*x1 + cos(0) + exp(0) + ln(1) + abs(-2) + sqrt(4) + pi", &[2.0, 1.0]);
        let want = 1f64.sin() * 2.0 + 1.0 + 1.0 + 0.0 + 2.0 + 2.0 + std::f64::consts::PI;
        assert!((v - want).abs() < 1e-15);
        assert_eq!(ev("1.5e-1 * 2E1", &[0.0, 0.0]), 3.0);
    }

    #[test]
    fn parse_errors_carry_columns() {
        let e = parse_state_expr("x1 + y", 1).unwrap_err();
        assert_eq!(e.column, 6);
        let e = parse_state_expr("x1 + (x1", 1).unwrap_err();
        assert_eq!(e.column, 9);
        let e = parse_state_expr("x1 $ 2", 1).unwrap_err();
        assert_eq!(e.column, 4);
        let e = parse_state_expr("sin x1", 1).unwrap_err();
        assert_eq!(e.column, 5);
        assert!(parse_state_expr("x1 x1", 1).is_err());
        assert!(parse_state_expr("", 1).is_err());
    }

    #[test]
    fn forward_mode_gradient_matches_hand_derivative() {
        // V = a^2/4 * x2^4 with a = 2
        let e = parse_state_expr("4/4*x2^4 + x1*sin(x2)", 2).unwrap();
        let mut g = [0.0; 2];
        let v = e.eval_grad(&[0.5, 1.3, 0.0], &mut g);
        assert!((v - (1.3f64.powi(4) + 0.5 * 1.3f64.sin())).abs() < 1e-14);
        assert!((g[0] - 1.3f64.sin()).abs() < 1e-14);
        assert!((g[1] - (4.0 * 1.3f64.powi(3) + 0.5 * 1.3f64.cos())).abs() < 1e-13);
    }

    #[test]
    fn uses_reports_time_dependence() {
        assert!(parse_state_expr("sin(t)*x1", 1).unwrap().uses("t"));
        assert!(!parse_state_expr("x1^2", 1).unwrap().uses("t"));
    }
}
