//! Expression language for objective and constraint functions.

use std::fmt;

use thiserror::Error;

/// Default absolute tolerance used to decide whether a kink is active.
pub const KINK_TOL: f64 = 1e-9;

/// Piecewise-smooth scalar expression over decision variables `z` and
/// uncertainty variables `u`. Variable indices are zero-based internally and
/// printed one-based (`z1`, `u1`, ...).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Z(usize),
    U(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Neg(Box<Expr>),
    Abs(Box<Expr>),
    Sqrt(Box<Expr>),
    Max(Vec<Expr>),
    Min(Vec<Expr>),
}

/// Evaluation point: decision vector plus an optional uncertainty realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub z: Vec<f64>,
    pub u: Option<Vec<f64>>,
}

impl Point {
    pub fn decision(z: &[f64]) -> Self {
        Point {
            z: z.to_vec(),
            u: None,
        }
    }

    pub fn with_uncertainty(z: &[f64], u: &[f64]) -> Self {
        Point {
            z: z.to_vec(),
            u: Some(u.to_vec()),
        }
    }
}

/// Which block of variables a derivative is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrt {
    Decision,
    Uncertainty,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown variable `{name}` at byte {offset}")]
    UnknownVariable { offset: usize, name: String },
    #[error("`{func}` needs at least 2 arguments, got {got} (byte {offset})")]
    Arity {
        offset: usize,
        func: String,
        got: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error in `{subexpr}`: {reason}")]
    Domain { subexpr: String, reason: String },
    #[error("variable `{0}` is outside the point's dimensions")]
    MissingVariable(String),
    #[error("not differentiable at point, active kinks: {}", .0.join(", "))]
    ActiveKink(Vec<String>),
}

fn domain(e: &Expr, reason: &str) -> EvalError {
    EvalError::Domain {
        subexpr: e.to_string(),
        reason: reason.to_string(),
    }
}

// ---------------------------------------------------------------- parsing

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    d: usize,
    p: usize,
}

/// Parse `text` into an expression with `d` decision and `p` uncertainty
/// variables.
pub fn parse_expr(text: &str, d: usize, p: usize) -> Result<Expr, ParseError> {
    let mut parser = Parser {
        src: text,
        bytes: text.as_bytes(),
        pos: 0,
        d,
        p,
    };
    let e = parser.expr()?;
    parser.skip_ws();
    if parser.pos < parser.bytes.len() {
        return Err(parser.syntax("unexpected trailing input"));
    }
    Ok(e)
}

impl<'a> Parser<'a> {
    fn syntax(&self, message: &str) -> ParseError {
        ParseError::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let mut base = self.atom()?;
        while self.eat(b'^') {
            let k = self.int_exponent()?;
            base = Expr::Pow(Box::new(base), k);
        }
        Ok(base)
    }

    fn int_exponent(&mut self) -> Result<i32, ParseError> {
        let paren = self.eat(b'(');
        let neg = self.eat(b'-');
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.syntax("expected integer exponent"));
        }
        if self.pos < self.bytes.len() && matches!(self.bytes[self.pos], b'.' | b'e' | b'E') {
            return Err(self.syntax("exponent must be an integer"));
        }
        let k: i32 = self.src[start..self.pos].parse().map_err(|_| ParseError::Syntax {
            offset: start,
            message: "exponent out of range".into(),
        })?;
        if paren {
            self.expect(b')')?;
        }
        Ok(if neg { -k } else { k })
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let b = self.bytes;
        let mut i = self.pos;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i < b.len() && b[i] == b'.' {
            i += 1;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
            let mut j = i + 1;
            if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                j += 1;
            }
            let digits = j;
            while j < b.len() && b[j].is_ascii_digit() {
                j += 1;
            }
            if j > digits {
                i = j;
            }
        }
        let text = &self.src[start..i];
        let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
            offset: start,
            message: format!("malformed number `{text}`"),
        })?;
        self.pos = i;
        Ok(Expr::Const(v))
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_alphanumeric()
                {
                    self.pos += 1;
                }
                let name = &self.src[start..self.pos];
                self.ident(name, start)
            }
            Some(_) => Err(self.syntax("unexpected character")),
        }
    }

    fn ident(&mut self, name: &str, start: usize) -> Result<Expr, ParseError> {
        match name {
            "abs" | "sqrt" | "max" | "min" => {
                self.expect(b'(')?;
                let mut args = vec![self.expr()?];
                while self.eat(b',') {
                    args.push(self.expr()?);
                }
                self.expect(b')')?;
                match name {
                    "abs" | "sqrt" => {
                        if args.len() != 1 {
                            return Err(ParseError::Syntax {
                                offset: start,
                                message: format!("`{name}` takes exactly one argument"),
                            });
                        }
                        let a = Box::new(args.pop().unwrap());
                        Ok(if name == "abs" {
                            Expr::Abs(a)
                        } else {
                            Expr::Sqrt(a)
                        })
                    }
                    _ => {
                        if args.len() < 2 {
                            return Err(ParseError::Arity {
                                offset: start,
                                func: name.to_string(),
                                got: args.len(),
                            });
                        }
                        Ok(if name == "max" {
                            Expr::Max(args)
                        } else {
                            Expr::Min(args)
                        })
                    }
                }
            }
            _ => {
                let unknown = || ParseError::UnknownVariable {
                    offset: start,
                    name: name.to_string(),
                };
                let (kind, idx) = name.split_at(1);
                if idx.is_empty() || !idx.bytes().all(|c| c.is_ascii_digit()) || idx.starts_with('0')
                {
                    return Err(unknown());
                }
                let k: usize = idx.parse().map_err(|_| unknown())?;
                match kind {
                    "z" if k <= self.d => Ok(Expr::Z(k - 1)),
                    "u" if k <= self.p => Ok(Expr::U(k - 1)),
                    _ => Err(unknown()),
                }
            }
        }
    }
}

// ---------------------------------------------------------------- printing

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prec = self.precedence();
        match self {
            Expr::Const(c) => {
                if c.is_sign_negative() {
                    write!(f, "(-{})", -c)
                } else {
                    write!(f, "{c}")
                }
            }
            Expr::Z(k) => write!(f, "z{}", k + 1),
            Expr::U(k) => write!(f, "u{}", k + 1),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                let op = match self {
                    Expr::Add(..) => " + ",
                    Expr::Sub(..) => " - ",
                    Expr::Mul(..) => "*",
                    _ => "/",
                };
                write_child(f, a, a.precedence() < prec)?;
                f.write_str(op)?;
                write_child(f, b, b.precedence() <= prec)
            }
            Expr::Pow(a, k) => {
                write_child(f, a, a.precedence() < 4)?;
                write!(f, "^{k}")
            }
            Expr::Neg(a) => {
                f.write_str("-")?;
                write_child(f, a, a.precedence() < 3)
            }
            Expr::Abs(a) => write!(f, "abs({a})"),
            Expr::Sqrt(a) => write!(f, "sqrt({a})"),
            Expr::Max(args) | Expr::Min(args) => {
                f.write_str(if matches!(self, Expr::Max(_)) { "max(" } else { "min(" })?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

// ---------------------------------------------------------------- evaluation

pub(crate) fn div_value(e: &Expr, a: f64, b: f64) -> Result<f64, EvalError> {
    if b == 0.0 {
        return Err(domain(e, "division by zero"));
    }
    Ok(a / b)
}

pub(crate) fn sqrt_value(e: &Expr, a: f64) -> Result<f64, EvalError> {
    if a < 0.0 {
        return Err(domain(e, "square root of a negative number"));
    }
    Ok(a.sqrt())
}

pub(crate) fn pow_value(e: &Expr, a: f64, k: i32) -> Result<f64, EvalError> {
    if a == 0.0 && k < 0 {
        return Err(domain(e, "zero raised to a negative power"));
    }
    Ok(a.powi(k))
}

fn max_value(vals: &[f64]) -> f64 {
    let mut m = vals[0];
    for &v in &vals[1..] {
        if v > m {
            m = v;
        }
    }
    m
}

fn min_value(vals: &[f64]) -> f64 {
    let mut m = vals[0];
    for &v in &vals[1..] {
        if v < m {
            m = v;
        }
    }
    m
}

/// Evaluate `e` at `pt` in double precision.
pub fn eval(e: &Expr, pt: &Point) -> Result<f64, EvalError> {
    match e {
        Expr::Const(c) => Ok(*c),
        Expr::Z(k) => pt
            .z
            .get(*k)
            .copied()
            .ok_or_else(|| EvalError::MissingVariable(e.to_string())),
        Expr::U(k) => pt
            .u
            .as_ref()
            .and_then(|u| u.get(*k))
            .copied()
            .ok_or_else(|| EvalError::MissingVariable(e.to_string())),
        Expr::Add(a, b) => Ok(eval(a, pt)? + eval(b, pt)?),
        Expr::Sub(a, b) => Ok(eval(a, pt)? - eval(b, pt)?),
        Expr::Mul(a, b) => Ok(eval(a, pt)? * eval(b, pt)?),
        Expr::Div(a, b) => {
            let (va, vb) = (eval(a, pt)?, eval(b, pt)?);
            div_value(e, va, vb)
        }
        Expr::Pow(a, k) => pow_value(e, eval(a, pt)?, *k),
        Expr::Neg(a) => Ok(-eval(a, pt)?),
        Expr::Abs(a) => Ok(eval(a, pt)?.abs()),
        Expr::Sqrt(a) => sqrt_value(e, eval(a, pt)?),
        Expr::Max(args) => {
            let vals = args.iter().map(|a| eval(a, pt)).collect::<Result<Vec<_>, _>>()?;
            Ok(max_value(&vals))
        }
        Expr::Min(args) => {
            let vals = args.iter().map(|a| eval(a, pt)).collect::<Result<Vec<_>, _>>()?;
            Ok(min_value(&vals))
        }
    }
}

/// Flattened postfix form of an expression for repeated evaluation.
/// Produces bit-identical results to [`eval`].
#[derive(Debug, Clone)]
pub struct Compiled {
    ops: Vec<Op>,
    depth: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Const(f64),
    Z(usize, String),
    U(usize, String),
    Add,
    Sub,
    Mul,
    Div(String),
    Pow(i32, String),
    Neg,
    Abs,
    Sqrt(String),
    Max(usize),
    Min(usize),
}

impl Compiled {
    pub fn new(e: &Expr) -> Self {
        let mut ops = Vec::new();
        let mut depth = 0;
        emit(e, &mut ops, 0, &mut depth);
        Compiled { ops, depth }
    }

    pub fn eval(&self, z: &[f64], u: Option<&[f64]>) -> Result<f64, EvalError> {
        let mut st: Vec<f64> = Vec::with_capacity(self.depth);
        for op in &self.ops {
            match op {
                Op::Const(c) => st.push(*c),
                Op::Z(k, name) => st.push(
                    *z.get(*k)
                        .ok_or_else(|| EvalError::MissingVariable(name.clone()))?,
                ),
                Op::U(k, name) => st.push(
                    *u.and_then(|u| u.get(*k))
                        .ok_or_else(|| EvalError::MissingVariable(name.clone()))?,
                ),
                Op::Neg => {
                    let a = st.last_mut().unwrap();
                    *a = -*a;
                }
                Op::Abs => {
                    let a = st.last_mut().unwrap();
                    *a = a.abs();
                }
                Op::Sqrt(label) => {
                    let a = st.last_mut().unwrap();
                    if *a < 0.0 {
                        return Err(EvalError::Domain {
                            subexpr: label.clone(),
                            reason: "square root of a negative number".into(),
                        });
                    }
                    *a = a.sqrt();
                }
                Op::Pow(k, label) => {
                    let a = st.last_mut().unwrap();
                    if *a == 0.0 && *k < 0 {
                        return Err(EvalError::Domain {
                            subexpr: label.clone(),
                            reason: "zero raised to a negative power".into(),
                        });
                    }
                    *a = a.powi(*k);
                }
                Op::Add | Op::Sub | Op::Mul | Op::Div(_) => {
                    let b = st.pop().unwrap();
                    let a = st.last_mut().unwrap();
                    match op {
                        Op::Add => *a += b,
                        Op::Sub => *a -= b,
                        Op::Mul => *a *= b,
                        Op::Div(label) => {
                            if b == 0.0 {
                                return Err(EvalError::Domain {
                                    subexpr: label.clone(),
                                    reason: "division by zero".into(),
                                });
                            }
                            *a /= b;
                        }
                        _ => unreachable!(),
                    }
                }
                Op::Max(n) | Op::Min(n) => {
                    let start = st.len() - n;
                    let v = if matches!(op, Op::Max(_)) {
                        max_value(&st[start..])
                    } else {
                        min_value(&st[start..])
                    };
                    st.truncate(start);
                    st.push(v);
                }
            }
        }
        Ok(st[0])
    }
}

fn emit(e: &Expr, ops: &mut Vec<Op>, level: usize, depth: &mut usize) {
    *depth = (*depth).max(level + 1);
    match e {
        Expr::Const(c) => ops.push(Op::Const(*c)),
        Expr::Z(k) => ops.push(Op::Z(*k, e.to_string())),
        Expr::U(k) => ops.push(Op::U(*k, e.to_string())),
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            emit(a, ops, level, depth);
            emit(b, ops, level + 1, depth);
            ops.push(match e {
                Expr::Add(..) => Op::Add,
                Expr::Sub(..) => Op::Sub,
                Expr::Mul(..) => Op::Mul,
                _ => Op::Div(e.to_string()),
            });
        }
        Expr::Pow(a, k) => {
            emit(a, ops, level, depth);
            ops.push(Op::Pow(*k, e.to_string()));
        }
        Expr::Neg(a) => {
            emit(a, ops, level, depth);
            ops.push(Op::Neg);
        }
        Expr::Abs(a) => {
            emit(a, ops, level, depth);
            ops.push(Op::Abs);
        }
        Expr::Sqrt(a) => {
            emit(a, ops, level, depth);
            ops.push(Op::Sqrt(e.to_string()));
        }
        Expr::Max(args) | Expr::Min(args) => {
            for (i, a) in args.iter().enumerate() {
                emit(a, ops, level + i, depth);
            }
            ops.push(if matches!(e, Expr::Max(_)) {
                Op::Max(args.len())
            } else {
                Op::Min(args.len())
            });
        }
    }
}

// ---------------------------------------------------------------- structure

impl Expr {
    /// True if the expression mentions any variable of the given block.
    pub fn depends_on(&self, wrt: Wrt) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Z(_) => wrt == Wrt::Decision,
            Expr::U(_) => wrt == Wrt::Uncertainty,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.depends_on(wrt) || b.depends_on(wrt)
            }
            Expr::Pow(a, _) | Expr::Neg(a) | Expr::Abs(a) | Expr::Sqrt(a) => a.depends_on(wrt),
            Expr::Max(args) | Expr::Min(args) => args.iter().any(|a| a.depends_on(wrt)),
        }
    }

    /// Indices of the variables of block `wrt` that occur in the expression.
    pub fn variables(&self, wrt: Wrt) -> Vec<usize> {
        fn walk(e: &Expr, wrt: Wrt, out: &mut Vec<usize>) {
            match e {
                Expr::Const(_) => {}
                Expr::Z(k) if wrt == Wrt::Decision => out.push(*k),
                Expr::U(k) if wrt == Wrt::Uncertainty => out.push(*k),
                Expr::Z(_) | Expr::U(_) => {}
                Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                    walk(a, wrt, out);
                    walk(b, wrt, out);
                }
                Expr::Pow(a, _) | Expr::Neg(a) | Expr::Abs(a) | Expr::Sqrt(a) => walk(a, wrt, out),
                Expr::Max(args) | Expr::Min(args) => {
                    for a in args {
                        walk(a, wrt, out);
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(self, wrt, &mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Largest decision and uncertainty index used, as counts.
    pub fn dimensions_used(&self) -> (usize, usize) {
        let d = self.variables(Wrt::Decision).last().map_or(0, |k| k + 1);
        let p = self.variables(Wrt::Uncertainty).last().map_or(0, |k| k + 1);
        (d, p)
    }

    /// Substitute the decision vector and fold every subtree that no longer
    /// depends on any variable. Subtrees whose evaluation fails are kept
    /// symbolic so the error surfaces at evaluation time.
    pub fn fold_decision(&self, z: &[f64]) -> Expr {
        let un = |e: &Expr| Box::new(e.fold_decision(z));
        let folded = match self {
            Expr::Const(c) => return Expr::Const(*c),
            Expr::Z(k) => return z.get(*k).map_or(Expr::Z(*k), |v| Expr::Const(*v)),
            Expr::U(k) => return Expr::U(*k),
            Expr::Add(a, b) => Expr::Add(un(a), un(b)),
            Expr::Sub(a, b) => Expr::Sub(un(a), un(b)),
            Expr::Mul(a, b) => Expr::Mul(un(a), un(b)),
            Expr::Div(a, b) => Expr::Div(un(a), un(b)),
            Expr::Pow(a, k) => Expr::Pow(un(a), *k),
            Expr::Neg(a) => Expr::Neg(un(a)),
            Expr::Abs(a) => Expr::Abs(un(a)),
            Expr::Sqrt(a) => Expr::Sqrt(un(a)),
            Expr::Max(args) => Expr::Max(args.iter().map(|a| a.fold_decision(z)).collect()),
            Expr::Min(args) => Expr::Min(args.iter().map(|a| a.fold_decision(z)).collect()),
        };
        if folded.children().iter().all(|c| matches!(c, Expr::Const(_))) {
            if let Ok(v) = eval(&folded, &Point { z: Vec::new(), u: None }) {
                return Expr::Const(v);
            }
        }
        folded
    }

    fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::Z(_) | Expr::U(_) => Vec::new(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => vec![a, b],
            Expr::Pow(a, _) | Expr::Neg(a) | Expr::Abs(a) | Expr::Sqrt(a) => vec![a],
            Expr::Max(args) | Expr::Min(args) => args.iter().collect(),
        }
    }

    /// `Σ c_j e_j`, skipping zero coefficients. Returns `0` when all vanish.
    pub fn linear_combination(coefs: &[f64], exprs: &[Expr]) -> Expr {
        let mut acc: Option<Expr> = None;
        for (c, e) in coefs.iter().zip(exprs) {
            if *c == 0.0 {
                continue;
            }
            let term = Expr::Mul(Box::new(Expr::Const(*c)), Box::new(e.clone()));
            acc = Some(match acc {
                None => term,
                Some(a) => Expr::Add(Box::new(a), Box::new(term)),
            });
        }
        acc.unwrap_or(Expr::Const(0.0))
    }
}

// ---------------------------------------------------------------- kinks

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KinkKind {
    Abs,
    Max,
    Min,
}

/// A nonsmooth atom that is active at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct KinkAtom {
    pub text: String,
    pub kind: KinkKind,
    /// For max/min: indices of branches within tolerance of the attained value.
    pub active_branches: Vec<usize>,
    pub depends_on_decision: bool,
    pub depends_on_uncertainty: bool,
}

/// List every abs node whose argument is within `tol` of zero and every
/// max/min node with at least two branches within `tol` of the attained value.
pub fn kink_atoms(e: &Expr, pt: &Point, tol: f64) -> Vec<KinkAtom> {
    let mut out = Vec::new();
    collect_kinks(e, pt, tol, &mut out);
    out
}

fn atom(e: &Expr, kind: KinkKind, active_branches: Vec<usize>) -> KinkAtom {
    KinkAtom {
        text: e.to_string(),
        kind,
        active_branches,
        depends_on_decision: e.depends_on(Wrt::Decision),
        depends_on_uncertainty: e.depends_on(Wrt::Uncertainty),
    }
}

fn collect_kinks(e: &Expr, pt: &Point, tol: f64, out: &mut Vec<KinkAtom>) {
    for c in e.children() {
        collect_kinks(c, pt, tol, out);
    }
    match e {
        Expr::Abs(a) => {
            if let Ok(v) = eval(a, pt) {
                if v.abs() <= tol {
                    out.push(atom(e, KinkKind::Abs, Vec::new()));
                }
            }
        }
        Expr::Max(args) | Expr::Min(args) => {
            let Ok(vals) = args.iter().map(|a| eval(a, pt)).collect::<Result<Vec<_>, _>>() else {
                return;
            };
            let is_max = matches!(e, Expr::Max(_));
            let best = if is_max { max_value(&vals) } else { min_value(&vals) };
            let active: Vec<usize> = (0..vals.len())
                .filter(|&i| (vals[i] - best).abs() <= tol)
                .collect();
            if active.len() >= 2 {
                let kind = if is_max { KinkKind::Max } else { KinkKind::Min };
                out.push(atom(e, kind, active));
            }
        }
        _ => {}
    }
}

// ---------------------------------------------------------------- gradients

/// Gradient of `e` at `pt` with respect to the chosen block of variables.
/// Fails with `ActiveKink` if a nonsmooth atom depending on that block is
/// active at `pt`.
pub fn grad_smooth(e: &Expr, pt: &Point, wrt: Wrt) -> Result<Vec<f64>, EvalError> {
    let active: Vec<String> = kink_atoms(e, pt, KINK_TOL)
        .into_iter()
        .filter(|k| match wrt {
            Wrt::Decision => k.depends_on_decision,
            Wrt::Uncertainty => k.depends_on_uncertainty,
        })
        .map(|k| k.text)
        .collect();
    if !active.is_empty() {
        return Err(EvalError::ActiveKink(active));
    }
    let n = match wrt {
        Wrt::Decision => pt.z.len(),
        Wrt::Uncertainty => pt.u.as_ref().map_or(0, |u| u.len()),
    };
    Ok(forward(e, pt, wrt, n)?.1)
}

type Dual = (f64, Vec<f64>);

fn axpy(alpha: f64, x: &[f64], beta: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| alpha * a + beta * b).collect()
}

fn forward(e: &Expr, pt: &Point, wrt: Wrt, n: usize) -> Result<Dual, EvalError> {
    let zero = || vec![0.0; n];
    Ok(match e {
        Expr::Const(c) => (*c, zero()),
        Expr::Z(k) | Expr::U(k) => {
            let v = eval(e, pt)?;
            let mut g = zero();
            let own = matches!(
                (e, wrt),
                (Expr::Z(_), Wrt::Decision) | (Expr::U(_), Wrt::Uncertainty)
            );
            if own {
                g[*k] = 1.0;
            }
            (v, g)
        }
        Expr::Add(a, b) => {
            let ((va, ga), (vb, gb)) = (forward(a, pt, wrt, n)?, forward(b, pt, wrt, n)?);
            (va + vb, axpy(1.0, &ga, 1.0, &gb))
        }
        Expr::Sub(a, b) => {
            let ((va, ga), (vb, gb)) = (forward(a, pt, wrt, n)?, forward(b, pt, wrt, n)?);
            (va - vb, axpy(1.0, &ga, -1.0, &gb))
        }
        Expr::Mul(a, b) => {
            let ((va, ga), (vb, gb)) = (forward(a, pt, wrt, n)?, forward(b, pt, wrt, n)?);
            (va * vb, axpy(vb, &ga, va, &gb))
        }
        Expr::Div(a, b) => {
            let ((va, ga), (vb, gb)) = (forward(a, pt, wrt, n)?, forward(b, pt, wrt, n)?);
            let v = div_value(e, va, vb)?;
            (v, axpy(1.0 / vb, &ga, -va / (vb * vb), &gb))
        }
        Expr::Pow(a, k) => {
            let (va, ga) = forward(a, pt, wrt, n)?;
            let v = pow_value(e, va, *k)?;
            let d = if *k == 0 { 0.0 } else { *k as f64 * va.powi(k - 1) };
            (v, ga.iter().map(|g| d * g).collect())
        }
        Expr::Neg(a) => {
            let (va, ga) = forward(a, pt, wrt, n)?;
            (-va, ga.iter().map(|g| -g).collect())
        }
        Expr::Abs(a) => {
            let (va, ga) = forward(a, pt, wrt, n)?;
            let s = if va < 0.0 { -1.0 } else { 1.0 };
            (va.abs(), ga.iter().map(|g| s * g).collect())
        }
        Expr::Sqrt(a) => {
            let (va, ga) = forward(a, pt, wrt, n)?;
            let v = sqrt_value(e, va)?;
            if v == 0.0 && ga.iter().any(|g| *g != 0.0) {
                return Err(domain(e, "square root is not differentiable at zero"));
            }
            let d = if v == 0.0 { 0.0 } else { 0.5 / v };
            (v, ga.iter().map(|g| d * g).collect())
        }
        Expr::Max(args) | Expr::Min(args) => {
            let duals = args
                .iter()
                .map(|a| forward(a, pt, wrt, n))
                .collect::<Result<Vec<_>, _>>()?;
            let is_max = matches!(e, Expr::Max(_));
            let mut best = 0;
            for (i, (v, _)) in duals.iter().enumerate() {
                let better = if is_max { *v > duals[best].0 } else { *v < duals[best].0 };
                if better {
                    best = i;
                }
            }
            duals.into_iter().nth(best).unwrap()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        parse_expr(s, 2, 1).unwrap()
    }

    #[test]
    fn parses_objective_with_abs() {
        let e = p("-2*z1 + abs(z2 - 1)");
        assert_eq!(e.to_string(), "-2*z1 + abs(z2 - 1)");
        assert_eq!(eval(&e, &Point::decision(&[0.0, 1.0])).unwrap(), 0.0);
    }

    #[test]
    fn zero_literal() {
        assert_eq!(p("0"), Expr::Const(0.0));
    }

    #[test]
    fn max_node_binary() {
        match p("max(z1, 2*z1)") {
            Expr::Max(args) => assert_eq!(args.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn precedence_and_unary_minus() {
        assert_eq!(p("-z1^2"), Expr::Neg(Box::new(Expr::Pow(Box::new(Expr::Z(0)), 2))));
        let e = p("1 - 2*3^2");
        assert_eq!(eval(&e, &Point::decision(&[0.0, 0.0])).unwrap(), -17.0);
        assert_eq!(eval(&p("2^-1"), &Point::decision(&[])).unwrap(), 0.5);
        assert_eq!(eval(&p("1.5e1 + .5"), &Point::decision(&[])).unwrap(), 15.5);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_expr("max(z1)", 1, 0),
            Err(ParseError::Arity { got: 1, .. })
        ));
        assert!(matches!(
            parse_expr("z3 + 1", 2, 0),
            Err(ParseError::UnknownVariable { offset: 0, .. })
        ));
        assert!(matches!(
            parse_expr("u1", 2, 0),
            Err(ParseError::UnknownVariable { .. })
        ));
        assert!(matches!(
            parse_expr("z1 + * 2", 2, 0),
            Err(ParseError::Syntax { offset: 5, .. })
        ));
        assert!(matches!(
            parse_expr("z1^1.5", 2, 0),
            Err(ParseError::Syntax { .. })
        ));
        assert!(parse_expr("(z1", 1, 0).is_err());
    }

    #[test]
    fn eval_constraint_with_uncertainty() {
        let g = parse_expr("u1^2*abs(z2) + max(z1, 2*z1) - 3*abs(u1)", 2, 1).unwrap();
        assert_eq!(eval(&g, &Point::with_uncertainty(&[0.0, 1.0], &[1.0])).unwrap(), -2.0);
    }

    #[test]
    fn eval_domain_errors_name_subexpression() {
        let e = p("1/(z1 - 1)");
        match eval(&e, &Point::decision(&[1.0, 0.0])) {
            Err(EvalError::Domain { subexpr, .. }) => assert_eq!(subexpr, "1/(z1 - 1)"),
            other => panic!("{other:?}"),
        }
        match eval(&p("sqrt(z1)"), &Point::decision(&[-1.0, 0.0])) {
            Err(EvalError::Domain { subexpr, .. }) => assert_eq!(subexpr, "sqrt(z1)"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn second_objective_value() {
        let f2 = p("1/2*abs(z1) + 3*z2 + 6");
        assert_eq!(eval(&f2, &Point::decision(&[0.0, -2.0])).unwrap(), 0.0);
    }

    #[test]
    fn smooth_gradients() {
        let e = parse_expr("z1^2", 1, 0).unwrap();
        assert_eq!(grad_smooth(&e, &Point::decision(&[3.0]), Wrt::Decision).unwrap(), vec![6.0]);
        let f2 = p("1/(abs(z1) + 1) - 3*z2 + 2");
        let g = grad_smooth(&f2, &Point::decision(&[1.0, 0.0]), Wrt::Decision).unwrap();
        assert!((g[0] + 0.25).abs() < 1e-15 && (g[1] + 3.0).abs() < 1e-15);
        let e = parse_expr("abs(z1)", 1, 0).unwrap();
        assert!(matches!(
            grad_smooth(&e, &Point::decision(&[0.0]), Wrt::Decision),
            Err(EvalError::ActiveKink(_))
        ));
    }

    #[test]
    fn uncertainty_kinks_do_not_block_decision_gradient() {
        let g = p("z1 - 3*abs(u1)");
        let pt = Point::with_uncertainty(&[1.0, 0.0], &[0.0]);
        assert_eq!(grad_smooth(&g, &pt, Wrt::Decision).unwrap(), vec![1.0, 0.0]);
        assert!(grad_smooth(&g, &pt, Wrt::Uncertainty).is_err());
    }

    #[test]
    fn kink_atom_listing() {
        let a = kink_atoms(&p("abs(z2 - 1)"), &Point::decision(&[0.0, 1.0]), KINK_TOL);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].kind, KinkKind::Abs);
        let m = kink_atoms(&p("max(z1, 2*z1)"), &Point::decision(&[0.0, 7.0]), KINK_TOL);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].active_branches, vec![0, 1]);
        let e = parse_expr("abs(z1)", 1, 0).unwrap();
        assert!(kink_atoms(&e, &Point::decision(&[5.0]), KINK_TOL).is_empty());
    }

    #[test]
    fn folding_matches_evaluation() {
        let g = p("u1^2*abs(z2) + max(z1, 2*z1) - 3*abs(u1)");
        let z = [0.3, -1.7];
        let h = g.fold_decision(&z);
        assert!(!h.depends_on(Wrt::Decision));
        for u in [-1.0, -0.3, 0.0, 0.55, 1.0] {
            let a = eval(&g, &Point::with_uncertainty(&z, &[u])).unwrap();
            let b = eval(&h, &Point::with_uncertainty(&[], &[u])).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn compiled_matches_tree_evaluation() {
        let g = p("u1^2*abs(z2) + max(z1, 2*z1, -z2) - 3*abs(u1) + 1/sqrt(abs(z1) + 1) - z1^-2");
        let c = Compiled::new(&g);
        for (z, u) in [([0.3, -1.7], 0.2), ([-2.0, 0.5], -1.0), ([1.0, 1.0], 0.75)] {
            let a = eval(&g, &Point::with_uncertainty(&z, &[u])).unwrap();
            let b = c.eval(&z, Some(&[u])).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let bad = Compiled::new(&p("1/(z1 - 1)"));
        assert!(matches!(bad.eval(&[1.0, 0.0], None), Err(EvalError::Domain { .. })));
    }

    #[test]
    fn printer_parenthesizes() {
        for s in [
            "z1 - (z2 - 1)",
            "(z1 + z2)*z1",
            "-(z1*z2)",
            "(-z1)^2",
            "z1/(z2*z1)",
            "z1*-z2",
            "max(z1, -z2, 3)",
        ] {
            let e = p(s);
            assert_eq!(e.to_string(), s);
            assert_eq!(p(&e.to_string()), e);
        }
    }
}
