//! Expression grammar, parser and piecewise maps.
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := '-' factor | base ('^' integer)?
//! base   := number | 'x' | ident | '(' expr ')' | func '(' expr ')'
//! func   := sqrt | exp | log | sin | cos | tan
//! ```
//!
//! Named parameters are substituted while parsing; `pi` is predefined.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, EvalError, Result};
use crate::interval::IntervalBox;
use crate::jet::{Jet3, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Func {
    Sqrt,
    Exp,
    Log,
    Sin,
    Cos,
    Tan,
}

impl Func {
    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
        }
    }

    fn apply<T: Scalar>(self, u: T) -> std::result::Result<T, EvalError> {
        match self {
            Func::Sqrt => u.sqrt(),
            Func::Exp => u.exp(),
            Func::Log => u.ln(),
            Func::Sin => Ok(u.sin()),
            Func::Cos => Ok(u.cos()),
            Func::Tan => u.tan(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    X,
    Const(f64),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn eval<T: Scalar>(&self, x: T) -> std::result::Result<T, EvalError> {
        Ok(match self {
            Expr::X => x,
            Expr::Const(c) => T::cst(*c),
            Expr::Neg(a) => -a.eval(x)?,
            Expr::Add(a, b) => a.eval(x)? + b.eval(x)?,
            Expr::Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Expr::Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Expr::Div(a, b) => a.eval(x)?.div(b.eval(x)?)?,
            Expr::Pow(a, n) => a.eval(x)?.powi(*n)?,
            Expr::Call(f, a) => f.apply(a.eval(x)?)?,
        })
    }

    /// Replaces every occurrence of `x` by `sub`.
    pub fn substitute(&self, sub: &Expr) -> Expr {
        let s = |e: &Expr| Box::new(e.substitute(sub));
        match self {
            Expr::X => sub.clone(),
            Expr::Const(c) => Expr::Const(*c),
            Expr::Neg(a) => Expr::Neg(s(a)),
            Expr::Add(a, b) => Expr::Add(s(a), s(b)),
            Expr::Sub(a, b) => Expr::Sub(s(a), s(b)),
            Expr::Mul(a, b) => Expr::Mul(s(a), s(b)),
            Expr::Div(a, b) => Expr::Div(s(a), s(b)),
            Expr::Pow(a, n) => Expr::Pow(s(a), *n),
            Expr::Call(f, a) => Expr::Call(*f, s(a)),
        }
    }

    pub fn contains_x(&self) -> bool {
        match self {
            Expr::X => true,
            Expr::Const(_) => false,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.contains_x(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.contains_x() || b.contains_x()
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::X => write!(f, "x"),
            Expr::Const(c) => {
                if *c < 0.0 {
                    write!(f, "({c:?})")
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, n) => write!(f, "({a}^{n})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

// ---------------------------------------------------------------------------
// Parser

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    params: &'a BTreeMap<String, f64>,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
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

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
            } else if self.eat(b'/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        let base = self.base()?;
        if self.eat(b'^') {
            let n = self.integer()?;
            return Ok(Expr::Pow(Box::new(base), n));
        }
        Ok(base)
    }

    fn integer(&mut self) -> Result<i32> {
        self.skip_ws();
        let neg = self.eat(b'-');
        let paren = !neg && self.eat(b'(');
        let neg = neg || (paren && self.eat(b'-'));
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("expected integer exponent");
        }
        let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let n: i32 = match s.parse() {
            Ok(n) => n,
            Err(_) => return self.err("exponent out of range"),
        };
        if paren && !self.eat(b')') {
            return self.err("expected ')'");
        }
        Ok(if neg { -n } else { n })
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let s = self.src;
        let digits = |p: &mut usize| {
            while *p < s.len() && s[*p].is_ascii_digit() {
                *p += 1;
            }
        };
        digits(&mut self.pos);
        if self.pos < s.len() && s[self.pos] == b'.' {
            self.pos += 1;
            digits(&mut self.pos);
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < s.len() && (s[self.pos] == b'+' || s[self.pos] == b'-') {
                self.pos += 1;
            }
            let exp_start = self.pos;
            digits(&mut self.pos);
            if exp_start == self.pos {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&s[start..self.pos]).unwrap();
        match text.parse::<f64>() {
            Ok(v) => Ok(Expr::Const(v)),
            Err(_) => {
                self.pos = start;
                self.err(format!("malformed number '{text}'"))
            }
        }
    }

    fn base(&mut self) -> Result<Expr> {
        match self.peek() {
            None => self.err("unexpected end of input"),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return self.err("expected ')'");
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                if name == "x" {
                    return Ok(Expr::X);
                }
                if let Some(f) = Func::from_name(name) {
                    if !self.eat(b'(') {
                        return self.err(format!("expected '(' after {name}"));
                    }
                    let arg = self.expr()?;
                    if !self.eat(b')') {
                        return self.err("expected ')'");
                    }
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                if let Some(v) = self.params.get(name) {
                    return Ok(Expr::Const(*v));
                }
                if name == "pi" {
                    return Ok(Expr::Const(std::f64::consts::PI));
                }
                Err(Error::UnknownIdentifier(name.to_string()))
            }
            Some(c) => self.err(format!("unexpected character '{}'", c as char)),
        }
    }
}

/// Parses a single expression with parameters substituted.
pub fn parse_expr(text: &str, params: &BTreeMap<String, f64>) -> Result<Expr> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        params,
    };
    let e = p.expr()?;
    if p.peek().is_some() {
        return p.err("trailing input");
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Piecewise maps

#[derive(Clone, Debug)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub expr: Expr,
    pub source: String,
}

/// A piecewise analytic self-map of `[lo, hi]`. Immutable after construction.
#[derive(Clone, Debug)]
pub struct MapExpr {
    pub lo: f64,
    pub hi: f64,
    pub params: BTreeMap<String, f64>,
    pub pieces: Vec<Piece>,
}

/// Subdivision depth used by [`MapExpr::eval_interval`].
pub const DEFAULT_DEPTH: u32 = 8;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MapFile {
    domain: [NumOrExpr; 2],
    #[serde(default)]
    params: BTreeMap<String, f64>,
    pieces: Vec<PieceFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PieceFile {
    on: [NumOrExpr; 2],
    expr: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum NumOrExpr {
    Num(f64),
    Text(String),
}

impl NumOrExpr {
    fn value(&self, params: &BTreeMap<String, f64>) -> Result<f64> {
        match self {
            NumOrExpr::Num(v) => Ok(*v),
            NumOrExpr::Text(s) => {
                let e = parse_expr(s, params)?;
                if e.contains_x() {
                    return Err(Error::MapFile(format!("endpoint '{s}' depends on x")));
                }
                e.eval(0.0f64).map_err(|source| Error::Eval {
                    at: s.clone(),
                    source,
                })
            }
        }
    }
}

impl MapExpr {
    /// Single-piece map on `domain`.
    pub fn parse(text: &str, domain: (f64, f64), params: &BTreeMap<String, f64>) -> Result<MapExpr> {
        MapExpr::from_pieces(domain, params, &[(domain.0, domain.1, text)])
    }

    pub fn from_pieces(
        domain: (f64, f64),
        params: &BTreeMap<String, f64>,
        pieces: &[(f64, f64, &str)],
    ) -> Result<MapExpr> {
        let (lo, hi) = domain;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::BadPartition(format!("invalid domain [{lo}, {hi}]")));
        }
        if pieces.is_empty() {
            return Err(Error::BadPartition("no pieces".into()));
        }
        let mut out = Vec::with_capacity(pieces.len());
        let mut cursor = lo;
        for (i, &(a, b, text)) in pieces.iter().enumerate() {
            if a != cursor {
                return Err(Error::BadPartition(format!(
                    "piece {i} starts at {a}, expected {cursor}"
                )));
            }
            if !(a < b) {
                return Err(Error::BadPartition(format!("piece {i} is empty: [{a}, {b}]")));
            }
            out.push(Piece {
                lo: a,
                hi: b,
                expr: parse_expr(text, params)?,
                source: text.to_string(),
            });
            cursor = b;
        }
        if cursor != hi {
            return Err(Error::BadPartition(format!(
                "pieces end at {cursor}, domain ends at {hi}"
            )));
        }
        Ok(MapExpr {
            lo,
            hi,
            params: params.clone(),
            pieces: out,
        })
    }

    /// Builds a map directly from ASTs (used for derived maps such as
    /// conjugations).
    pub fn from_exprs(domain: (f64, f64), pieces: Vec<(f64, f64, Expr)>) -> Result<MapExpr> {
        let pieces = pieces
            .into_iter()
            .map(|(lo, hi, expr)| Piece {
                lo,
                hi,
                source: expr.to_string(),
                expr,
            })
            .collect::<Vec<_>>();
        let sources: Vec<(f64, f64, String)> =
            pieces.iter().map(|p| (p.lo, p.hi, p.source.clone())).collect();
        let refs: Vec<(f64, f64, &str)> =
            sources.iter().map(|(a, b, s)| (*a, *b, s.as_str())).collect();
        // Validate the layout through the usual path, then keep the exact ASTs.
        let mut m = MapExpr::from_pieces(domain, &BTreeMap::new(), &refs)?;
        m.pieces = pieces;
        Ok(m)
    }

    pub fn from_json(text: &str) -> Result<MapExpr> {
        let mf: MapFile =
            serde_json::from_str(text).map_err(|e| Error::MapFile(e.to_string()))?;
        let domain = (mf.domain[0].value(&mf.params)?, mf.domain[1].value(&mf.params)?);
        let mut pieces = Vec::new();
        for p in &mf.pieces {
            pieces.push((p.on[0].value(&mf.params)?, p.on[1].value(&mf.params)?, p.expr.as_str()));
        }
        MapExpr::from_pieces(domain, &mf.params, &pieces)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "domain": [self.lo, self.hi],
            "params": self.params,
            "pieces": self.pieces.iter().map(|p| serde_json::json!({
                "on": [p.lo, p.hi],
                "expr": p.source,
            })).collect::<Vec<_>>(),
        })
    }

    pub fn domain(&self) -> IntervalBox {
        IntervalBox::new(self.lo, self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn boundaries(&self) -> Vec<f64> {
        self.pieces.iter().skip(1).map(|p| p.lo).collect()
    }

    /// Index of the piece owning `x` under the half-open convention.
    pub fn piece_index(&self, x: f64) -> Result<usize> {
        if !(x >= self.lo && x <= self.hi) {
            return Err(Error::OutOfDomain {
                x,
                lo: self.lo,
                hi: self.hi,
            });
        }
        let n = self.pieces.len();
        Ok(self.pieces.iter().position(|p| x < p.hi).unwrap_or(n - 1))
    }

    fn wrap<T>(x: f64, r: std::result::Result<T, EvalError>) -> Result<T> {
        r.map_err(|source| Error::Eval {
            at: format!("x = {x}"),
            source,
        })
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let i = self.piece_index(x)?;
        MapExpr::wrap(x, self.pieces[i].expr.eval(x))
    }

    pub fn eval_jet(&self, x: f64) -> Result<Jet3<f64>> {
        let i = self.piece_index(x)?;
        self.eval_jet_piece(i, x)
    }

    /// Jet of piece `i`'s expression at `x`, regardless of ownership.
    pub fn eval_jet_piece(&self, i: usize, x: f64) -> Result<Jet3<f64>> {
        MapExpr::wrap(x, self.pieces[i].expr.eval(Jet3::var(x)))
    }

    /// Iterates the map `n` times.
    pub fn iterate(&self, x: f64, n: usize) -> Result<f64> {
        let mut y = x;
        for _ in 0..n {
            y = self.eval(y)?;
        }
        Ok(y)
    }

    /// Jet of `f^k` at `x`.
    pub fn iterate_jet(&self, x: f64, k: usize) -> Result<Jet3<f64>> {
        let mut j = Jet3::var(x);
        for _ in 0..k {
            let outer = self.eval_jet(j.v0)?;
            j = j.then(outer);
        }
        Ok(j)
    }

    fn check_cell(&self, cell: &IntervalBox) -> Result<()> {
        for x in [cell.lo, cell.hi] {
            if !(x >= self.lo && x <= self.hi) {
                return Err(Error::OutOfDomain {
                    x,
                    lo: self.lo,
                    hi: self.hi,
                });
            }
        }
        Ok(())
    }

    /// Splits `cell` along piece boundaries, returning (piece, sub-cell)
    /// pairs. A piece contributes only if it owns some point of the cell.
    pub fn piece_cells(&self, cell: &IntervalBox) -> Vec<(usize, IntervalBox)> {
        let n = self.pieces.len();
        let mut out = Vec::new();
        for (i, p) in self.pieces.iter().enumerate() {
            let last = i + 1 == n;
            let owns = (cell.lo < p.hi || last) && cell.hi >= p.lo;
            if !owns {
                continue;
            }
            let a = cell.lo.max(p.lo);
            let b = cell.hi.min(p.hi);
            out.push((i, IntervalBox::new(a, b.max(a))));
        }
        out
    }

    /// Natural interval extension of the jet of piece `i` over `cell`.
    pub fn jet_enclosure(&self, i: usize, cell: IntervalBox) -> Result<Jet3<IntervalBox>> {
        self.pieces[i]
            .expr
            .eval(Jet3::var(cell))
            .map_err(|source| Error::Eval {
                at: format!("cell {cell:?}"),
                source,
            })
    }

    /// Encloses `{ f^(order)(x) : x in cell }` for order 0 or 1.
    pub fn eval_interval(&self, cell: IntervalBox, order: u8) -> Result<IntervalBox> {
        self.eval_interval_depth(cell, order, DEFAULT_DEPTH)
    }

    pub fn eval_interval_depth(&self, cell: IntervalBox, order: u8, depth: u32) -> Result<IntervalBox> {
        assert!(order <= 1, "order must be 0 or 1");
        self.check_cell(&cell)?;
        let mut acc: Option<IntervalBox> = None;
        for (i, sub) in self.piece_cells(&cell) {
            let r = self.enclose_piece(i, sub, order, depth)?;
            acc = Some(match acc {
                None => r,
                Some(a) => a.hull(&r),
            });
        }
        Ok(acc.expect("cell meets at least one piece"))
    }

    fn enclose_piece(&self, i: usize, cell: IntervalBox, order: u8, depth: u32) -> Result<IntervalBox> {
        let expr = &self.pieces[i].expr;
        let err = |source| Error::Eval {
            at: format!("cell {cell:?}"),
            source,
        };
        if order == 0 {
            let value = |x: IntervalBox| expr.eval(x).map_err(err);
            if cell.width() == 0.0 {
                return value(IntervalBox::point(cell.lo));
            }
            let parts = if depth == 0 { 1 } else { 1usize << depth };
            let mut acc: Option<IntervalBox> = None;
            for sub in cell.split(parts) {
                // A derivative pole (e.g. a square root at 0) only costs the
                // monotonicity shortcut.
                let r = match expr.eval(Jet3::var(sub)) {
                    Ok(j) if !j.v1.contains_zero() && j.v1.is_finite() => {
                        let h = value(IntervalBox::point(sub.lo))?.hull(&value(IntervalBox::point(sub.hi))?);
                        IntervalBox::new(h.lo.max(j.v0.lo), h.hi.min(j.v0.hi).max(h.lo.max(j.v0.lo)))
                    }
                    Ok(j) => j.v0,
                    Err(_) => value(sub)?,
                };
                acc = Some(match acc {
                    None => r,
                    Some(a) => a.hull(&r),
                });
            }
            return Ok(acc.unwrap());
        }
        if cell.width() == 0.0 {
            return Ok(expr.eval(Jet3::var(IntervalBox::point(cell.lo))).map_err(err)?.v1);
        }
        let parts = if depth == 0 { 1 } else { 1usize << depth };
        let mut acc: Option<IntervalBox> = None;
        for sub in cell.split(parts) {
            let j = expr.eval(Jet3::var(sub)).map_err(err)?;
            // Monotone on the sub-cell: the endpoint values bound the range.
            let r = if !j.v2.contains_zero() && j.v2.is_finite() {
                let a = expr.eval(Jet3::var(IntervalBox::point(sub.lo))).map_err(err)?;
                let b = expr.eval(Jet3::var(IntervalBox::point(sub.hi))).map_err(err)?;
                let h = a.v1.hull(&b.v1);
                IntervalBox::new(h.lo.max(j.v1.lo), h.hi.min(j.v1.hi).max(h.lo.max(j.v1.lo)))
            } else {
                j.v1
            };
            acc = Some(match acc {
                None => r,
                Some(a) => a.hull(&r),
            });
        }
        Ok(acc.unwrap())
    }

    /// Range enclosure check of the self-map property.
    pub fn check_self_map(&self) -> Result<SelfMapCheck> {
        let (range, is_self_map) = self.range_within(self.domain(), self.domain())?;
        Ok(SelfMapCheck { range, is_self_map })
    }

    /// Encloses f(cell) and decides whether it lies in `target` (up to
    /// 1e−12·|I|). Cells whose enclosure overshoots are bisected down to
    /// 1e−13·|I| unless a point value already lands outside.
    pub fn range_within(&self, cell: IntervalBox, target: IntervalBox) -> Result<(IntervalBox, bool)> {
        let tol = 1e-12 * self.width();
        let min_width = 1e-13 * self.width();
        let fits = |r: &IntervalBox| r.lo >= target.lo - tol && r.hi <= target.hi + tol;
        let mut stack = if cell.width() > 0.0 { cell.split(64) } else { vec![cell] };
        let mut range: Option<IntervalBox> = None;
        let mut inside = true;
        while let Some(c) = stack.pop() {
            let r = self.eval_interval_depth(c, 0, 2)?;
            let escapes = !fits(&r) && !fits(&IntervalBox::point(self.eval(c.mid())?));
            if !fits(&r) && !escapes && c.width() > min_width {
                let m = c.mid();
                stack.push(IntervalBox::new(c.lo, m));
                stack.push(IntervalBox::new(m, c.hi));
                continue;
            }
            inside &= fits(&r);
            range = Some(range.map_or(r, |a| a.hull(&r)));
        }
        Ok((range.expect("cell is nonempty"), inside))
    }

    /// Compares one-sided jets at every interior piece boundary.
    pub fn continuity_report(&self, rel_tol: f64) -> Result<Vec<BoundaryCheck>> {
        let mut out = Vec::new();
        for i in 1..self.pieces.len() {
            let b = self.pieces[i].lo;
            let left = self.boundary_jet(i - 1, b)?;
            let right = self.boundary_jet(i, b)?;
            let l = [left.v0, left.v1, left.v2];
            let r = [right.v0, right.v1, right.v2];
            let mut dev = [0.0; 3];
            for k in 0..3 {
                let scale = l[k].abs().max(r[k].abs()).max(1.0);
                dev[k] = (l[k] - r[k]).abs() / scale;
                if dev[k].is_nan() {
                    dev[k] = f64::INFINITY;
                }
            }
            out.push(BoundaryCheck {
                x: b,
                left,
                right,
                rel_dev: dev,
                c2: dev.iter().all(|d| *d <= rel_tol),
            });
        }
        Ok(out)
    }

    /// Jet of piece `i` at `x`; derivatives are NaN where only the value exists.
    fn boundary_jet(&self, i: usize, x: f64) -> Result<Jet3<f64>> {
        match self.eval_jet_piece(i, x) {
            Ok(j) => Ok(j),
            Err(_) => {
                let v = MapExpr::wrap(x, self.pieces[i].expr.eval(x))?;
                Ok(Jet3::new(v, f64::NAN, f64::NAN, f64::NAN))
            }
        }
    }

    pub fn is_c2(&self) -> Result<bool> {
        Ok(self.continuity_report(1e-9)?.iter().all(|b| b.c2))
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SelfMapCheck {
    pub range: IntervalBox,
    pub is_self_map: bool,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BoundaryCheck {
    pub x: f64,
    pub left: Jet3<f64>,
    pub right: Jet3<f64>,
    pub rel_dev: [f64; 3],
    pub c2: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_params() -> BTreeMap<String, f64> {
        BTreeMap::new()
    }

    #[test]
    fn precedence_and_power() {
        let e = parse_expr("1 + 2*x^2 - x/4", &no_params()).unwrap();
        assert_eq!(e.eval(2.0f64).unwrap(), 1.0 + 8.0 - 0.5);
        let e = parse_expr("-x^2", &no_params()).unwrap();
        assert_eq!(e.eval(3.0f64).unwrap(), -9.0);
        let e = parse_expr("x^-1 + 2^(-2)", &no_params()).unwrap();
        assert_eq!(e.eval(4.0f64).unwrap(), 0.5);
    }

    #[test]
    fn syntax_error_reports_position() {
        match parse_expr("4*x*(1-", &no_params()) {
            Err(Error::Syntax { pos, .. }) => assert_eq!(pos, 7),
            other => panic!("unexpected {other:?}"),
        }
        match parse_expr("4*x)", &no_params()) {
            Err(Error::Syntax { pos, .. }) => assert_eq!(pos, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_identifier() {
        assert_eq!(
            parse_expr("a*x", &no_params()),
            Err(Error::UnknownIdentifier("a".into()))
        );
    }

    #[test]
    fn params_substituted() {
        let mut p = no_params();
        p.insert("a".into(), 4.0);
        let m = MapExpr::parse("a*x*(1-x)", (0.0, 1.0), &p).unwrap();
        assert_eq!(m.eval(0.5).unwrap(), 1.0);
    }

    #[test]
    fn partition_validation() {
        let p = no_params();
        assert!(MapExpr::from_pieces((0.0, 1.0), &p, &[(0.0, 0.4, "x"), (0.5, 1.0, "x")]).is_err());
        assert!(MapExpr::from_pieces((0.0, 1.0), &p, &[(0.0, 0.5, "x"), (0.5, 0.9, "x")]).is_err());
        assert!(MapExpr::from_pieces((0.0, 1.0), &p, &[(0.0, 0.5, "x"), (0.5, 1.0, "x")]).is_ok());
    }

    #[test]
    fn half_open_pieces() {
        let p = no_params();
        let m = MapExpr::from_pieces((0.0, 1.0), &p, &[(0.0, 0.5, "0"), (0.5, 1.0, "1")]).unwrap();
        assert_eq!(m.eval(0.5).unwrap(), 1.0);
        assert_eq!(m.eval(1.0).unwrap(), 1.0);
        assert_eq!(m.eval(0.49).unwrap(), 0.0);
        assert!(m.eval(1.5).is_err());
    }

    #[test]
    fn json_endpoints_accept_expressions() {
        let text = r#"{"domain":[0,1],"params":{"a":0.875},
            "pieces":[{"on":[0,"1/2"],"expr":"(x-1/2)+a"},
                      {"on":["1/2",1],"expr":"-4*(2*a+1)*(x-1/2)^3+(x-1/2)+a"}]}"#;
        let m = MapExpr::from_json(text).unwrap();
        assert_eq!(m.pieces.len(), 2);
        assert_eq!(m.pieces[1].lo, 0.5);
    }

    #[test]
    fn display_round_trips() {
        let e = parse_expr("1 - 1.7*tan(pi*x^2/4)", &no_params()).unwrap();
        let again = parse_expr(&e.to_string(), &no_params()).unwrap();
        for x in [0.0, 0.3, -0.9] {
            assert_eq!(e.eval(x).unwrap(), again.eval(x).unwrap());
        }
    }
}
