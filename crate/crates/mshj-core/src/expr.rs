//! Expression parsing, printing, evaluation, and forward-mode automatic
//! differentiation.
//!
//! The grammar is a small fixed calculator language: decimal and scientific
//! literals, identifiers, the binary operators `+ - * / ^`, unary minus, and a
//! fixed function list (`sin cos tan asin acos atan exp log sqrt abs`; `log`
//! is the natural logarithm). `^` binds tightest and associates to the right,
//! then unary minus, then `* /`, then `+ -`.
//!
//! Evaluation is a tree walk generic over a [`Scalar`] carrier: plain `f64`,
//! dual numbers (value + gradient), or second-order Taylor values (value +
//! gradient + dense symmetric Hessian). Derivatives are exact up to floating
//! rounding; the Hessian is symmetric by construction. Domain checks live in
//! the walker so every carrier enforces the same rules.

use std::collections::BTreeMap;
use std::fmt;

use smallvec::SmallVec;
use thiserror::Error;

/// Errors from parsing or evaluating expressions.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    /// Unparseable input; `offset` is a byte position into the source text.
    #[error("syntax error at byte {offset}: expected {expected}")]
    Syntax { offset: usize, expected: String },

    /// An identifier was applied like a function but is not in the function list.
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },

    /// Evaluation found a variable the environment does not bind.
    #[error("unbound variable `{name}`")]
    UnboundVariable { name: String },

    /// Evaluation left a function's domain; carries the offending subexpression.
    #[error("domain error: {reason} in `{subexpr}`")]
    Domain { reason: String, subexpr: String },
}

/// Unary operations: negation plus the fixed function list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Tan,
    Asin,
    Acos,
    Atan,
    Exp,
    Log,
    Sqrt,
    Abs,
}

/// Binary operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

const FUNCTIONS: &[(&str, UnaryOp)] = &[
    ("sin", UnaryOp::Sin),
    ("cos", UnaryOp::Cos),
    ("tan", UnaryOp::Tan),
    ("asin", UnaryOp::Asin),
    ("acos", UnaryOp::Acos),
    ("atan", UnaryOp::Atan),
    ("exp", UnaryOp::Exp),
    ("log", UnaryOp::Log),
    ("sqrt", UnaryOp::Sqrt),
    ("abs", UnaryOp::Abs),
];

fn function_name(op: UnaryOp) -> &'static str {
    FUNCTIONS
        .iter()
        .find(|(_, o)| *o == op)
        .map(|(n, _)| *n)
        .unwrap_or("-")
}

/// Expression tree over a variable type `V`.
///
/// Parsed expressions use `V = String` (see [`ExprAst`]); the residual modules
/// compile them to slot-addressed trees for chart-checked evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr<V> {
    Const(f64),
    Var(V),
    Unary(UnaryOp, Box<Expr<V>>),
    Binary(BinaryOp, Box<Expr<V>>, Box<Expr<V>>),
}

/// A parsed expression with named variables.
pub type ExprAst = Expr<String>;

impl<V> Expr<V> {
    /// Rebuilds the tree with each variable mapped through `f`, failing fast.
    pub fn try_map_vars<W, E>(&self, f: &mut impl FnMut(&V) -> Result<W, E>) -> Result<Expr<W>, E> {
        Ok(match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(v) => Expr::Var(f(v)?),
            Expr::Unary(op, a) => Expr::Unary(*op, Box::new(a.try_map_vars(f)?)),
            Expr::Binary(op, a, b) => Expr::Binary(
                *op,
                Box::new(a.try_map_vars(f)?),
                Box::new(b.try_map_vars(f)?),
            ),
        })
    }

    /// Visits every variable occurrence.
    pub fn for_each_var(&self, f: &mut impl FnMut(&V)) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => f(v),
            Expr::Unary(_, a) => a.for_each_var(f),
            Expr::Binary(_, a, b) => {
                a.for_each_var(f);
                b.for_each_var(f);
            }
        }
    }
}

impl<V: Clone> Expr<V> {
    /// Replaces selected variables by constants (used to bind family parameters).
    pub fn substitute(&self, f: &impl Fn(&V) -> Option<f64>) -> Expr<V> {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(v) => match f(v) {
                Some(c) => Expr::Const(c),
                None => Expr::Var(v.clone()),
            },
            Expr::Unary(op, a) => Expr::Unary(*op, Box::new(a.substitute(f))),
            Expr::Binary(op, a, b) => {
                Expr::Binary(*op, Box::new(a.substitute(f)), Box::new(b.substitute(f)))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'+' => {
                out.push((Tok::Plus, i));
                i += 1;
            }
            b'-' => {
                out.push((Tok::Minus, i));
                i += 1;
            }
            b'*' => {
                out.push((Tok::Star, i));
                i += 1;
            }
            b'/' => {
                out.push((Tok::Slash, i));
                i += 1;
            }
            b'^' => {
                out.push((Tok::Caret, i));
                i += 1;
            }
            b'(' => {
                out.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                out.push((Tok::RParen, i));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                // Lone '.' with no digits on either side is not a number.
                if i == start + 1 && bytes[start] == b'.' {
                    return Err(ExprError::Syntax {
                        offset: start,
                        expected: "a digit".into(),
                    });
                }
                // Exponent part only if followed by a well-formed exponent.
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
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
                    offset: start,
                    expected: "a numeric literal".into(),
                })?;
                out.push((Tok::Num(value), start));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
            }
            _ => {
                return Err(ExprError::Syntax {
                    offset: i,
                    expected: "a number, identifier, operator, or parenthesis".into(),
                });
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(_, o)| *o).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.peek() {
            Some(Tok::RParen) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(ExprError::Syntax {
                offset: self.offset(),
                expected: "')'".into(),
            }),
        }
    }

    fn expr(&mut self) -> Result<ExprAst, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Binary(BinaryOp::Add, Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Binary(BinaryOp::Sub, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<ExprAst, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = Expr::Binary(BinaryOp::Mul, Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = Expr::Binary(BinaryOp::Div, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<ExprAst, ExprError> {
        if let Some(Tok::Minus) = self.peek() {
            self.pos += 1;
            let inner = self.unary()?;
            // Negative literals fold so that printing round-trips structurally.
            if let Expr::Const(c) = inner {
                return Ok(Expr::Const(-c));
            }
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<ExprAst, ExprError> {
        let base = self.atom()?;
        if let Some(Tok::Caret) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Binary(BinaryOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<ExprAst, ExprError> {
        let offset = self.offset();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Const(v)),
            Some(Tok::Ident(name)) => {
                if let Some(Tok::LParen) = self.peek() {
                    let op = FUNCTIONS
                        .iter()
                        .find(|(n, _)| *n == name)
                        .map(|(_, op)| *op)
                        .ok_or(ExprError::UnknownFunction {
                            name: name.clone(),
                            offset,
                        })?;
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    Ok(Expr::Unary(op, Box::new(arg)))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            _ => Err(ExprError::Syntax {
                offset,
                expected: "a number, identifier, '(' or unary '-'".into(),
            }),
        }
    }
}

/// Parses an expression string into an [`ExprAst`].
pub fn parse(src: &str) -> Result<ExprAst, ExprError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        end: src.len(),
    };
    let e = p.expr()?;
    if p.pos != toks.len() {
        return Err(ExprError::Syntax {
            offset: p.offset(),
            expected: "end of input or an operator".into(),
        });
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

fn prec<V>(e: &Expr<V>) -> u8 {
    match e {
        Expr::Const(c) if *c < 0.0 => 3,
        Expr::Const(_) | Expr::Var(_) => 5,
        Expr::Unary(UnaryOp::Neg, _) => 3,
        Expr::Unary(_, _) => 5,
        Expr::Binary(BinaryOp::Add | BinaryOp::Sub, _, _) => 1,
        Expr::Binary(BinaryOp::Mul | BinaryOp::Div, _, _) => 2,
        Expr::Binary(BinaryOp::Pow, _, _) => 4,
    }
}

fn write_expr<V: fmt::Display>(
    f: &mut fmt::Formatter<'_>,
    e: &Expr<V>,
    min_prec: u8,
) -> fmt::Result {
    if prec(e) < min_prec {
        write!(f, "(")?;
        write_expr(f, e, 0)?;
        return write!(f, ")");
    }
    match e {
        Expr::Const(c) => write!(f, "{c}"),
        Expr::Var(v) => write!(f, "{v}"),
        Expr::Unary(UnaryOp::Neg, a) => {
            write!(f, "-")?;
            write_expr(f, a, 3)
        }
        Expr::Unary(op, a) => {
            write!(f, "{}(", function_name(*op))?;
            write_expr(f, a, 0)?;
            write!(f, ")")
        }
        Expr::Binary(op, a, b) => {
            let (lp, text, rp) = match op {
                BinaryOp::Add => (1, " + ", 2),
                BinaryOp::Sub => (1, " - ", 2),
                BinaryOp::Mul => (2, "*", 3),
                BinaryOp::Div => (2, "/", 3),
                BinaryOp::Pow => (5, "^", 3),
            };
            write_expr(f, a, lp)?;
            write!(f, "{text}")?;
            write_expr(f, b, rp)
        }
    }
}

impl<V: fmt::Display> fmt::Display for Expr<V> {
    /// Prints the expression so that reparsing reproduces the same tree
    /// (structurally, for parser-canonical trees; always by value).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self, 0)
    }
}

// ---------------------------------------------------------------------------
// Scalars
// ---------------------------------------------------------------------------

/// Carrier for the evaluation walk: plain values, dual numbers, or
/// second-order Taylor values.
///
/// Gradient and Hessian storage is broadcast-on-demand: a constant carries an
/// empty gradient that reads as zeros of any length, so constants need no
/// dimension context.
pub(crate) trait Scalar: Clone {
    fn from_const(v: f64) -> Self;
    fn value(&self) -> f64;
    /// True when all derivative information is identically zero.
    fn is_ad_const(&self) -> bool;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    /// Chain-rule composition with a scalar function given its value and
    /// first two derivatives at `self.value()`.
    fn lift(&self, f: f64, df: f64, ddf: f64) -> Self;

    /// Integer power by binary exponentiation (repeated multiplication).
    fn powi(&self, k: i64) -> Self {
        if k == 0 {
            return Self::from_const(1.0);
        }
        let mut e = k.unsigned_abs();
        let mut base = self.clone();
        let mut acc: Option<Self> = None;
        while e > 0 {
            if e & 1 == 1 {
                acc = Some(match acc {
                    Some(a) => a.mul(&base),
                    None => base.clone(),
                });
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        let r = acc.expect("nonzero exponent");
        if k < 0 {
            let v = r.value();
            r.lift(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
        } else {
            r
        }
    }
}

impl Scalar for f64 {
    fn from_const(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn is_ad_const(&self) -> bool {
        true
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn lift(&self, f: f64, _df: f64, _ddf: f64) -> Self {
        f
    }
}

type Grad = SmallVec<[f64; 8]>;
type Hess = SmallVec<[f64; 64]>;

/// First-order dual number: value plus gradient.
#[derive(Debug, Clone)]
pub(crate) struct Dual {
    v: f64,
    g: Grad,
}

impl Dual {
    /// Seeds coordinate `idx` of a `k`-dimensional differentiation basis.
    pub(crate) fn seed(v: f64, k: usize, idx: usize) -> Self {
        let mut g = Grad::from_elem(0.0, k);
        g[idx] = 1.0;
        Dual { v, g }
    }

    pub(crate) fn grad(&self, i: usize) -> f64 {
        self.g.get(i).copied().unwrap_or(0.0)
    }

    /// A dual number with an explicitly supplied gradient (used by
    /// finite-difference cross-checks in other modules' tests).
    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) fn with_grad(v: f64, grad: &[f64]) -> Self {
        Dual {
            v,
            g: grad.iter().copied().collect(),
        }
    }
}

impl Scalar for Dual {
    fn from_const(v: f64) -> Self {
        Dual { v, g: Grad::new() }
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn is_ad_const(&self) -> bool {
        self.g.iter().all(|&x| x == 0.0)
    }
    fn add(&self, o: &Self) -> Self {
        let k = self.g.len().max(o.g.len());
        let g = (0..k).map(|i| self.grad(i) + o.grad(i)).collect();
        Dual {
            v: self.v + o.v,
            g,
        }
    }
    fn sub(&self, o: &Self) -> Self {
        let k = self.g.len().max(o.g.len());
        let g = (0..k).map(|i| self.grad(i) - o.grad(i)).collect();
        Dual {
            v: self.v - o.v,
            g,
        }
    }
    fn mul(&self, o: &Self) -> Self {
        let k = self.g.len().max(o.g.len());
        let g = (0..k)
            .map(|i| self.grad(i) * o.v + self.v * o.grad(i))
            .collect();
        Dual {
            v: self.v * o.v,
            g,
        }
    }
    fn div(&self, o: &Self) -> Self {
        let k = self.g.len().max(o.g.len());
        let q = self.v / o.v;
        let g = (0..k)
            .map(|i| (self.grad(i) - q * o.grad(i)) / o.v)
            .collect();
        Dual { v: q, g }
    }
    fn neg(&self) -> Self {
        Dual {
            v: -self.v,
            g: self.g.iter().map(|x| -x).collect(),
        }
    }
    fn lift(&self, f: f64, df: f64, _ddf: f64) -> Self {
        Dual {
            v: f,
            g: self.g.iter().map(|x| df * x).collect(),
        }
    }
}

/// Second-order Taylor value: value, gradient, and dense symmetric Hessian.
#[derive(Debug, Clone)]
pub(crate) struct Taylor2 {
    v: f64,
    g: Grad,
    /// Row-major `k × k`, where `k = g.len()`; both triangles stored.
    h: Hess,
}

impl Taylor2 {
    pub(crate) fn seed(v: f64, k: usize, idx: usize) -> Self {
        let mut g = Grad::from_elem(0.0, k);
        g[idx] = 1.0;
        Taylor2 {
            v,
            g,
            h: Hess::from_elem(0.0, k * k),
        }
    }

    pub(crate) fn grad(&self, i: usize) -> f64 {
        self.g.get(i).copied().unwrap_or(0.0)
    }

    pub(crate) fn hess(&self, i: usize, j: usize) -> f64 {
        let k = self.g.len();
        if i < k && j < k {
            self.h[i * k + j]
        } else {
            0.0
        }
    }
}

impl Scalar for Taylor2 {
    fn from_const(v: f64) -> Self {
        Taylor2 {
            v,
            g: Grad::new(),
            h: Hess::new(),
        }
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn is_ad_const(&self) -> bool {
        self.g.iter().all(|&x| x == 0.0) && self.h.iter().all(|&x| x == 0.0)
    }
    fn add(&self, o: &Self) -> Self {
        let k = self.g.len().max(o.g.len());
        let g = (0..k).map(|i| self.grad(i) + o.grad(i)).collect();
        let mut h = Hess::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                h.push(self.hess(i, j) + o.hess(i, j));
            }
        }
        Taylor2 {
            v: self.v + o.v,
            g,
            h,
        }
    }
    fn sub(&self, o: &Self) -> Self {
        let k = self.g.len().max(o.g.len());
        let g = (0..k).map(|i| self.grad(i) - o.grad(i)).collect();
        let mut h = Hess::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                h.push(self.hess(i, j) - o.hess(i, j));
            }
        }
        Taylor2 {
            v: self.v - o.v,
            g,
            h,
        }
    }
    fn mul(&self, o: &Self) -> Self {
        let k = self.g.len().max(o.g.len());
        let g = (0..k)
            .map(|i| self.grad(i) * o.v + self.v * o.grad(i))
            .collect();
        // Computed on the upper triangle and mirrored: the cross terms are
        // order-sensitive in floating arithmetic, and the Hessian must be
        // bitwise symmetric.
        let mut h = Hess::from_elem(0.0, k * k);
        for i in 0..k {
            for j in i..k {
                let v = self.hess(i, j) * o.v
                    + self.grad(i) * o.grad(j)
                    + self.grad(j) * o.grad(i)
                    + self.v * o.hess(i, j);
                h[i * k + j] = v;
                h[j * k + i] = v;
            }
        }
        Taylor2 {
            v: self.v * o.v,
            g,
            h,
        }
    }
    fn div(&self, o: &Self) -> Self {
        // From a = q·b: q' = (a' − q b')/b, q'' = (a'' − q b'' − q'b' − b'q')/b.
        let k = self.g.len().max(o.g.len());
        let q = self.v / o.v;
        let g: Grad = (0..k)
            .map(|i| (self.grad(i) - q * o.grad(i)) / o.v)
            .collect();
        let gq = |i: usize| g.get(i).copied().unwrap_or(0.0);
        let mut h = Hess::from_elem(0.0, k * k);
        for i in 0..k {
            for j in i..k {
                let v = (self.hess(i, j)
                    - q * o.hess(i, j)
                    - gq(i) * o.grad(j)
                    - gq(j) * o.grad(i))
                    / o.v;
                h[i * k + j] = v;
                h[j * k + i] = v;
            }
        }
        Taylor2 { v: q, g, h }
    }
    fn neg(&self) -> Self {
        Taylor2 {
            v: -self.v,
            g: self.g.iter().map(|x| -x).collect(),
            h: self.h.iter().map(|x| -x).collect(),
        }
    }
    fn lift(&self, f: f64, df: f64, ddf: f64) -> Self {
        let k = self.g.len();
        let g = self.g.iter().map(|x| df * x).collect();
        // Mirrored upper triangle: (ddf·gᵢ)·gⱼ and (ddf·gⱼ)·gᵢ round
        // differently, and the Hessian must be bitwise symmetric.
        let mut h = Hess::from_elem(0.0, k * k);
        for i in 0..k {
            for j in i..k {
                let v = df * self.h[i * k + j] + ddf * self.g[i] * self.g[j];
                h[i * k + j] = v;
                h[j * k + i] = v;
            }
        }
        Taylor2 { v: f, g, h }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

fn domain_err<V: fmt::Display>(reason: impl Into<String>, at: &Expr<V>) -> ExprError {
    ExprError::Domain {
        reason: reason.into(),
        subexpr: at.to_string(),
    }
}

/// Evaluates `e` over any scalar carrier; `look` resolves variables.
pub(crate) fn eval_with<V: fmt::Display, T: Scalar>(
    e: &Expr<V>,
    look: &impl Fn(&V) -> Option<T>,
) -> Result<T, ExprError> {
    match e {
        Expr::Const(c) => Ok(T::from_const(*c)),
        Expr::Var(v) => look(v).ok_or_else(|| ExprError::UnboundVariable {
            name: v.to_string(),
        }),
        Expr::Unary(op, a) => {
            let t = eval_with(a, look)?;
            let v = t.value();
            Ok(match op {
                UnaryOp::Neg => t.neg(),
                UnaryOp::Sin => t.lift(v.sin(), v.cos(), -v.sin()),
                UnaryOp::Cos => t.lift(v.cos(), -v.sin(), -v.cos()),
                UnaryOp::Tan => {
                    let tn = v.tan();
                    let sec2 = 1.0 + tn * tn;
                    t.lift(tn, sec2, 2.0 * tn * sec2)
                }
                UnaryOp::Asin => {
                    if v.abs() > 1.0 {
                        return Err(domain_err(format!("asin of {v} outside [-1, 1]"), e));
                    }
                    let w = 1.0 - v * v;
                    let sw = w.sqrt();
                    t.lift(v.asin(), 1.0 / sw, v / (w * sw))
                }
                UnaryOp::Acos => {
                    if v.abs() > 1.0 {
                        return Err(domain_err(format!("acos of {v} outside [-1, 1]"), e));
                    }
                    let w = 1.0 - v * v;
                    let sw = w.sqrt();
                    t.lift(v.acos(), -1.0 / sw, -v / (w * sw))
                }
                UnaryOp::Atan => {
                    let w = 1.0 + v * v;
                    t.lift(v.atan(), 1.0 / w, -2.0 * v / (w * w))
                }
                UnaryOp::Exp => {
                    let ev = v.exp();
                    t.lift(ev, ev, ev)
                }
                UnaryOp::Log => {
                    if v <= 0.0 {
                        return Err(domain_err(format!("log of non-positive value {v}"), e));
                    }
                    t.lift(v.ln(), 1.0 / v, -1.0 / (v * v))
                }
                UnaryOp::Sqrt => {
                    if v < 0.0 {
                        return Err(domain_err(format!("sqrt of negative value {v}"), e));
                    }
                    let s = v.sqrt();
                    t.lift(s, 0.5 / s, -0.25 / (v * s))
                }
                UnaryOp::Abs => {
                    // Derivative at 0 defined as 0 (sign convention).
                    let sign = if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    t.lift(v.abs(), sign, 0.0)
                }
            })
        }
        Expr::Binary(op, a, b) => {
            let ta = eval_with(a, look)?;
            let tb = eval_with(b, look)?;
            match op {
                BinaryOp::Add => Ok(ta.add(&tb)),
                BinaryOp::Sub => Ok(ta.sub(&tb)),
                BinaryOp::Mul => Ok(ta.mul(&tb)),
                BinaryOp::Div => {
                    if tb.value() == 0.0 {
                        return Err(domain_err("division by zero", e));
                    }
                    Ok(ta.div(&tb))
                }
                BinaryOp::Pow => {
                    let ev = tb.value();
                    // Integer powers (with derivative-free exponent) go through
                    // repeated multiplication: exact for cases like 2^3^2 and
                    // valid for negative bases.
                    if tb.is_ad_const() && ev.fract() == 0.0 && ev.abs() <= 2147483648.0 {
                        let k = ev as i64;
                        if k < 0 && ta.value() == 0.0 {
                            return Err(domain_err(
                                "zero base with negative integer exponent",
                                e,
                            ));
                        }
                        return Ok(ta.powi(k));
                    }
                    let bv = ta.value();
                    if bv <= 0.0 {
                        return Err(domain_err(
                            format!("non-integer exponent requires positive base, got {bv}"),
                            e,
                        ));
                    }
                    // b^e = exp(e·log b)
                    let lnb = ta.lift(bv.ln(), 1.0 / bv, -1.0 / (bv * bv));
                    let prod = tb.mul(&lnb);
                    let pv = prod.value().exp();
                    Ok(prod.lift(pv, pv, pv))
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Public evaluation API over named variables
// ---------------------------------------------------------------------------

/// Variable environment: identifier → value. Duplicates cannot occur by
/// construction (it is a map).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Binding(BTreeMap<String, f64>);

impl Binding {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or overwrites a binding; chainable.
    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.0.insert(name.to_string(), value);
        self
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.0.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }
}

/// Evaluates a parsed expression at a variable binding.
pub fn eval(e: &ExprAst, env: &Binding) -> Result<f64, ExprError> {
    eval_with(e, &|name: &String| env.get(name))
}

/// Differentiation order for [`derive`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeriveOrder {
    First,
    Second,
}

/// Value, gradient, and (for second order) dense Hessian over the requested
/// variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Option<Vec<Vec<f64>>>,
}

/// Forward-mode derivatives of `e` with respect to `vars` at `env`.
///
/// Every variable in `vars` must be bound in `env`; other variables are held
/// constant at their bound values. First order uses dual numbers, second order
/// Taylor values; the Hessian is symmetric by construction.
pub fn derive(
    e: &ExprAst,
    env: &Binding,
    vars: &[&str],
    order: DeriveOrder,
) -> Result<Derivatives, ExprError> {
    let k = vars.len();
    let seed_index = |name: &String| vars.iter().position(|v| v == name);
    match order {
        DeriveOrder::First => {
            let look = |name: &String| -> Option<Dual> {
                let v = env.get(name)?;
                Some(match seed_index(name) {
                    Some(i) => Dual::seed(v, k, i),
                    None => Dual::from_const(v),
                })
            };
            let d = eval_with(e, &look)?;
            Ok(Derivatives {
                value: d.value(),
                gradient: (0..k).map(|i| d.grad(i)).collect(),
                hessian: None,
            })
        }
        DeriveOrder::Second => {
            let look = |name: &String| -> Option<Taylor2> {
                let v = env.get(name)?;
                Some(match seed_index(name) {
                    Some(i) => Taylor2::seed(v, k, i),
                    None => Taylor2::from_const(v),
                })
            };
            let d = eval_with(e, &look)?;
            Ok(Derivatives {
                value: d.value(),
                gradient: (0..k).map(|i| d.grad(i)).collect(),
                hessian: Some(
                    (0..k)
                        .map(|i| (0..k).map(|j| d.hess(i, j)).collect())
                        .collect(),
                ),
            })
        }
    }
}

/// AST construction helpers for programmatic model definitions.
pub mod build {
    use super::{BinaryOp, Expr, ExprAst, UnaryOp};

    pub fn c(v: f64) -> ExprAst {
        Expr::Const(v)
    }
    pub fn var(name: &str) -> ExprAst {
        Expr::Var(name.to_string())
    }
    pub fn add(a: ExprAst, b: ExprAst) -> ExprAst {
        Expr::Binary(BinaryOp::Add, Box::new(a), Box::new(b))
    }
    pub fn sub(a: ExprAst, b: ExprAst) -> ExprAst {
        Expr::Binary(BinaryOp::Sub, Box::new(a), Box::new(b))
    }
    pub fn mul(a: ExprAst, b: ExprAst) -> ExprAst {
        Expr::Binary(BinaryOp::Mul, Box::new(a), Box::new(b))
    }
    pub fn div(a: ExprAst, b: ExprAst) -> ExprAst {
        Expr::Binary(BinaryOp::Div, Box::new(a), Box::new(b))
    }
    pub fn pow(a: ExprAst, b: ExprAst) -> ExprAst {
        Expr::Binary(BinaryOp::Pow, Box::new(a), Box::new(b))
    }
    pub fn neg(a: ExprAst) -> ExprAst {
        Expr::Unary(UnaryOp::Neg, Box::new(a))
    }
    pub fn sqrt(a: ExprAst) -> ExprAst {
        Expr::Unary(UnaryOp::Sqrt, Box::new(a))
    }
    pub fn asin(a: ExprAst) -> ExprAst {
        Expr::Unary(UnaryOp::Asin, Box::new(a))
    }
}
