//! A small language for disorder-averaged Duhamel expressions.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor ('*' factor)*
//! factor := '-' factor | number | 'beta' | 'J'
//!         | 'S(' axis ',' int ',' int ')' | 'R(' int ',' int ')' | 'h(' int ')'
//!         | 'D[' expr ']' | 'E[' expr ']' | 'G[' expr ']' | '(' expr ')'
//! ```
//!
//! `S(μ, X, a)` is `σ^μ_X` on replica `a` with `X` the 1-based index into the
//! range family. `R` and `h` use the run's axis and family. Arithmetic inside
//! `E[…]` is applied per sample before averaging.

use std::fmt;

use crate::error::{Error, Result};
use crate::pauli::Axis;
use crate::replica::{Atom, AtomTerm};
use crate::spectral::MAX_DUHAMEL_ORDER;

mod eval;
pub use eval::{compile, evaluate, evaluate_joint, evaluate_many, sample_values, Compiled, EvalContext};

/// Operator factors per replica allowed inside a `G` block.
pub const MAX_GIBBS_DEGREE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Beta,
    Coupling,
    Spin { axis: Axis, range: usize, replica: usize },
    /// Stored with `a ≤ b`.
    Overlap(usize, usize),
    Field(usize),
    D(Box<Expr>),
    E(Box<Expr>),
    G(Box<Expr>),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdentityKind {
    Exact,
    Asymptotic,
}

impl fmt::Display for IdentityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IdentityKind::Exact => "exact",
            IdentityKind::Asymptotic => "asymptotic",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedIdentity {
    pub name: String,
    pub kind: IdentityKind,
    pub lhs: Expr,
    pub rhs: Expr,
}

impl Expr {
    pub fn overlap(a: usize, b: usize) -> Expr {
        Expr::Overlap(a.min(b), a.max(b))
    }

    /// Largest replica index referenced.
    pub fn max_replica(&self) -> usize {
        match self {
            Expr::Spin { replica, .. } => *replica,
            Expr::Overlap(a, b) => (*a).max(*b),
            Expr::Field(a) => *a,
            Expr::D(e) | Expr::E(e) | Expr::G(e) | Expr::Neg(e) => e.max_replica(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => a.max_replica().max(b.max_replica()),
            _ => 0,
        }
    }

    /// Largest 1-based range index used by `S`.
    pub fn max_range(&self) -> usize {
        match self {
            Expr::Spin { range, .. } => *range,
            Expr::D(e) | Expr::E(e) | Expr::G(e) | Expr::Neg(e) => e.max_range(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => a.max_range().max(b.max_range()),
            _ => 0,
        }
    }
}

// ---------------------------------------------------------------------------
// Parser

struct Parser<'s> {
    src: &'s str,
    pos: usize,
    scope: Scope,
}

fn perr<T>(pos: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse { pos, msg: msg.into() })
}

impl<'s> Parser<'s> {
    fn skip_ws(&mut self) {
        while let Some(c) = self.peek_raw() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn peek_raw(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.peek_raw()
    }

    fn expect(&mut self, c: char) -> Result<()> {
        match self.peek() {
            Some(d) if d == c => {
                self.pos += c.len_utf8();
                Ok(())
            }
            Some(d) => perr(self.pos, format!("expected '{c}', found '{d}'")),
            None => perr(self.pos, format!("expected '{c}', found end of input")),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some('+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some('-') => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        while self.peek() == Some('*') {
            self.pos += 1;
            lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
        }
        Ok(lhs)
    }

    fn word(&mut self) -> &'s str {
        let start = self.pos;
        while let Some(c) = self.peek_raw() {
            if c.is_ascii_alphanumeric() || c == '_' {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        &self.src[start..self.pos]
    }

    fn integer(&mut self) -> Result<usize> {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek_raw(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return perr(start, "expected an integer");
        }
        self.src[start..self.pos].parse::<usize>().or_else(|_| perr(start, "integer out of range"))
    }

    fn positive(&mut self, what: &str) -> Result<usize> {
        self.skip_ws();
        let at = self.pos;
        let v = self.integer()?;
        if v == 0 {
            return perr(at, format!("{what} index must be ≥ 1"));
        }
        Ok(v)
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let mut i = self.pos;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'.' {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut k = i + 1;
            if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                k += 1;
            }
            let digits = k;
            while k < bytes.len() && bytes[k].is_ascii_digit() {
                k += 1;
            }
            if k > digits {
                i = k;
            }
        }
        self.pos = i;
        let text = &self.src[start..i];
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Expr::Num(v)),
            _ => perr(start, format!("malformed number '{text}'")),
        }
    }

    fn block(&mut self, kind: char, at: usize) -> Result<Expr> {
        let outer = self.scope;
        let inner_scope = match (kind, outer) {
            ('E', Scope::Top) => Scope::InE,
            ('E', _) => return perr(at, "E block nested inside another block"),
            (_, Scope::InBlock) => return perr(at, format!("{kind} block nested inside a D/G block")),
            _ => Scope::InBlock,
        };
        self.expect('[')?;
        self.scope = inner_scope;
        let inner = self.expr()?;
        self.scope = outer;
        self.expect(']')?;
        let e = match kind {
            'D' => Expr::D(Box::new(inner)),
            'E' => Expr::E(Box::new(inner)),
            _ => Expr::G(Box::new(inner)),
        };
        if kind != 'E' {
            check_degree(&e).map_err(|err| match err {
                Error::Parse { msg, .. } => Error::Parse { pos: at, msg },
                other => other,
            })?;
        }
        Ok(e)
    }

    fn operator_here(&self, at: usize) -> Result<()> {
        if self.scope != Scope::InBlock {
            return perr(at, "spin operators must sit inside a D or G block");
        }
        Ok(())
    }

    fn factor(&mut self) -> Result<Expr> {
        let at = match self.peek() {
            None => return perr(self.pos, "unexpected end of input"),
            Some(_) => self.pos,
        };
        let c = self.peek_raw().unwrap();
        if c == '-' {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        if c == '(' {
            self.pos += 1;
            let e = self.expr()?;
            self.expect(')')?;
            return Ok(e);
        }
        if c.is_ascii_digit() || c == '.' {
            return self.number();
        }
        if !c.is_ascii_alphabetic() {
            return perr(at, format!("unexpected character '{c}'"));
        }
        let w = self.word();
        match w {
            "beta" => Ok(Expr::Beta),
            "J" => Ok(Expr::Coupling),
            "D" | "E" | "G" => self.block(w.chars().next().unwrap(), at),
            "R" => {
                self.operator_here(at)?;
                self.expect('(')?;
                let a = self.positive("replica")?;
                self.expect(',')?;
                let b = self.positive("replica")?;
                self.expect(')')?;
                Ok(Expr::overlap(a, b))
            }
            "h" => {
                self.operator_here(at)?;
                self.expect('(')?;
                let a = self.positive("replica")?;
                self.expect(')')?;
                Ok(Expr::Field(a))
            }
            "S" => {
                self.operator_here(at)?;
                self.expect('(')?;
                self.skip_ws();
                let ap = self.pos;
                let axis = match self.word() {
                    "x" => Axis::X,
                    "y" => Axis::Y,
                    "z" => Axis::Z,
                    other => return perr(ap, format!("axis must be x, y or z, found '{other}'")),
                };
                self.expect(',')?;
                let range = self.positive("range")?;
                self.expect(',')?;
                let replica = self.positive("replica")?;
                self.expect(')')?;
                Ok(Expr::Spin { axis, range, replica })
            }
            _ => perr(at, format!("unknown name '{w}'")),
        }
    }
}

/// Parse and validate an expression.
pub fn parse(src: &str) -> Result<Expr> {
    let mut p = Parser { src, pos: 0, scope: Scope::Top };
    if p.peek().is_none() {
        return perr(0, "empty expression");
    }
    let e = p.expr()?;
    if let Some(c) = p.peek() {
        return perr(p.pos, format!("unexpected '{c}' after expression"));
    }
    Ok(e)
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Scope {
    Top,
    InE,
    InBlock,
}

/// Nesting rules and degree caps for a built AST. Parsed expressions
/// already satisfy them.
pub fn validate(e: &Expr) -> Result<()> {
    fn walk(e: &Expr, scope: Scope) -> Result<()> {
        match e {
            Expr::D(inner) | Expr::G(inner) => {
                if scope == Scope::InBlock {
                    return perr(0, "block nested inside a D/G block");
                }
                walk(inner, Scope::InBlock)?;
                check_degree(e)
            }
            Expr::E(inner) => {
                if scope != Scope::Top {
                    return perr(0, "E block nested inside another block");
                }
                walk(inner, Scope::InE)
            }
            Expr::Spin { .. } | Expr::Overlap(..) | Expr::Field(_) => {
                if scope != Scope::InBlock {
                    return perr(0, "spin operators must sit inside a D or G block");
                }
                Ok(())
            }
            Expr::Neg(a) => walk(a, scope),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                walk(a, scope)?;
                walk(b, scope)
            }
            Expr::Num(_) | Expr::Beta | Expr::Coupling => Ok(()),
        }
    }
    walk(e, Scope::Top)
}

fn check_degree(block: &Expr) -> Result<()> {
    let (inner, cap, name) = match block {
        Expr::D(i) => (i, MAX_DUHAMEL_ORDER, "D"),
        Expr::G(i) => (i, MAX_GIBBS_DEGREE, "G"),
        _ => unreachable!(),
    };
    let bound = degree_bound(inner);
    if let Some((a, k)) = bound.iter().enumerate().find(|(_, &k)| k > cap) {
        return perr(0, format!("{name} block puts up to {k} operators on replica {} (cap {cap})", a));
    }
    Ok(())
}

/// Upper bound of operator count per replica over all monomials of a block
/// body, indexed by replica.
fn degree_bound(e: &Expr) -> Vec<usize> {
    fn add(a: &mut Vec<usize>, b: &[usize]) {
        if a.len() < b.len() {
            a.resize(b.len(), 0);
        }
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
    fn max(a: &mut Vec<usize>, b: &[usize]) {
        if a.len() < b.len() {
            a.resize(b.len(), 0);
        }
        for (x, y) in a.iter_mut().zip(b) {
            *x = (*x).max(*y);
        }
    }
    let unit = |r: usize| {
        let mut v = vec![0; r + 1];
        v[r] += 1;
        v
    };
    match e {
        Expr::Spin { replica, .. } => unit(*replica),
        Expr::Field(a) => unit(*a),
        Expr::Overlap(a, b) => {
            let mut v = unit(*a);
            add(&mut v, &unit(*b));
            v
        }
        Expr::Neg(a) => degree_bound(a),
        Expr::Add(a, b) | Expr::Sub(a, b) => {
            let mut v = degree_bound(a);
            max(&mut v, &degree_bound(b));
            v
        }
        Expr::Mul(a, b) => {
            let mut v = degree_bound(a);
            add(&mut v, &degree_bound(b));
            v
        }
        _ => vec![],
    }
}

// ---------------------------------------------------------------------------
// Printing

fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => 1,
        Expr::Mul(..) => 2,
        Expr::Neg(_) => 3,
        _ => 4,
    }
}

fn print_into(e: &Expr, out: &mut String) {
    let wrap = |x: &Expr, min: u8, out: &mut String| {
        if prec(x) < min {
            out.push('(');
            print_into(x, out);
            out.push(')');
        } else {
            print_into(x, out);
        }
    };
    match e {
        Expr::Num(v) => {
            if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                out.push('(');
                out.push('-');
                out.push_str(&fmt_num(-v));
                out.push(')');
            } else {
                out.push_str(&fmt_num(*v));
            }
        }
        Expr::Beta => out.push_str("beta"),
        Expr::Coupling => out.push('J'),
        Expr::Spin { axis, range, replica } => out.push_str(&format!("S({axis},{range},{replica})")),
        Expr::Overlap(a, b) => out.push_str(&format!("R({},{})", a.min(b), a.max(b))),
        Expr::Field(a) => out.push_str(&format!("h({a})")),
        Expr::D(x) | Expr::E(x) | Expr::G(x) => {
            out.push(match e {
                Expr::D(_) => 'D',
                Expr::E(_) => 'E',
                _ => 'G',
            });
            out.push('[');
            print_into(x, out);
            out.push(']');
        }
        Expr::Neg(x) => {
            out.push('-');
            wrap(x, 3, out);
        }
        Expr::Add(a, b) | Expr::Sub(a, b) => {
            wrap(a, 1, out);
            out.push_str(if matches!(e, Expr::Add(..)) { " + " } else { " - " });
            wrap(b, 2, out);
        }
        Expr::Mul(a, b) => {
            wrap(a, 2, out);
            out.push('*');
            wrap(b, 3, out);
        }
    }
}

/// Deterministic text form; `parse(print_canonical(e)) == e` for every
/// parsed `e`.
pub fn print_canonical(e: &Expr) -> String {
    let mut s = String::new();
    print_into(e, &mut s);
    s
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_canonical(self))
    }
}

// ---------------------------------------------------------------------------
// Expansion of block bodies

/// Polynomial in atoms with numeric coefficients. `beta` and `J` are
/// substituted from `(beta, j)`.
pub fn expand_block(body: &Expr, beta: f64, j: f64) -> Result<Vec<AtomTerm>> {
    let terms = match body {
        Expr::Num(v) => vec![AtomTerm::new(*v, vec![])],
        Expr::Beta => vec![AtomTerm::new(beta, vec![])],
        Expr::Coupling => vec![AtomTerm::new(j, vec![])],
        Expr::Spin { axis, range, replica } => {
            vec![AtomTerm::new(1.0, vec![Atom::Spin { axis: *axis, range: range - 1, a: *replica }])]
        }
        Expr::Overlap(a, b) => vec![AtomTerm::new(1.0, vec![Atom::Overlap { a: *a, b: *b }])],
        Expr::Field(a) => vec![AtomTerm::new(1.0, vec![Atom::Field { a: *a }])],
        Expr::Neg(x) => expand_block(x, beta, j)?.into_iter().map(|t| AtomTerm::new(-t.coeff, t.atoms)).collect(),
        Expr::Add(a, b) => {
            let mut v = expand_block(a, beta, j)?;
            v.extend(expand_block(b, beta, j)?);
            v
        }
        Expr::Sub(a, b) => {
            let mut v = expand_block(a, beta, j)?;
            v.extend(expand_block(b, beta, j)?.into_iter().map(|t| AtomTerm::new(-t.coeff, t.atoms)));
            v
        }
        Expr::Mul(a, b) => {
            let l = expand_block(a, beta, j)?;
            let r = expand_block(b, beta, j)?;
            l.iter().flat_map(|x| r.iter().map(move |y| x.times(y))).collect()
        }
        Expr::D(_) | Expr::E(_) | Expr::G(_) => {
            return Err(Error::Context("nested block inside a D/G body".into()));
        }
    };
    Ok(simplify(terms))
}

/// Merge terms with identical atom multisets and drop zeros.
pub fn simplify(terms: Vec<AtomTerm>) -> Vec<AtomTerm> {
    let mut out: Vec<AtomTerm> = Vec::new();
    for mut t in terms {
        t.atoms.sort();
        if let Some(o) = out.iter_mut().find(|o| o.atoms == t.atoms) {
            o.coeff += t.coeff;
        } else {
            out.push(t);
        }
    }
    out.retain(|t| t.coeff != 0.0);
    out
}

// ---------------------------------------------------------------------------
// Identity files

/// Parse one line `name ; kind ; lhs ; rhs`.
pub fn parse_identity_line(line: &str) -> Result<ParsedIdentity> {
    let parts: Vec<&str> = line.split(';').collect();
    if parts.len() != 4 {
        return perr(0, format!("identity line needs 4 ';'-separated fields, found {}", parts.len()));
    }
    let name = parts[0].trim();
    if name.is_empty() {
        return perr(0, "identity name is empty");
    }
    let kind = match parts[1].trim() {
        "exact" => IdentityKind::Exact,
        "asymptotic" => IdentityKind::Asymptotic,
        other => return perr(parts[0].len() + 1, format!("kind must be exact or asymptotic, found '{other}'")),
    };
    let offset = parts[0].len() + parts[1].len() + 2;
    let lhs = parse(parts[2]).map_err(|e| shift(e, offset))?;
    let rhs = parse(parts[3]).map_err(|e| shift(e, offset + parts[2].len() + 1))?;
    Ok(ParsedIdentity { name: name.to_string(), kind, lhs, rhs })
}

fn shift(e: Error, by: usize) -> Error {
    match e {
        Error::Parse { pos, msg } => Error::Parse { pos: pos + by, msg },
        other => other,
    }
}

/// Parse an identity file. Blank lines and text after `#` are ignored.
pub fn parse_identity_file(text: &str) -> Result<Vec<ParsedIdentity>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_identity_line(line).map_err(|e| match e {
            Error::Parse { pos, msg } => Error::Parse { pos, msg: format!("line {}: {msg}", no + 1) },
            other => other,
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(e: Expr) -> Box<Expr> {
        Box::new(e)
    }

    #[test]
    fn grammar_examples() {
        assert_eq!(parse("E[ D[R(1,2)] ]").unwrap(), Expr::E(b(Expr::D(b(Expr::Overlap(1, 2))))));
        let e = parse("E[ D[R(1,1)*R(2,3)] - D[R(1,2)]*D[R(1,3)] ]").unwrap();
        match e {
            Expr::E(inner) => assert!(matches!(*inner, Expr::Sub(..))),
            _ => panic!(),
        }
        assert!(matches!(parse("D[E[R(1,2)]]"), Err(Error::Parse { .. })));
    }

    #[test]
    fn positioned_errors() {
        match parse("E[D[R(1,2)]") {
            Err(Error::Parse { pos, .. }) => assert_eq!(pos, 11),
            other => panic!("{other:?}"),
        }
        match parse("E[D[R(1,q)]]") {
            Err(Error::Parse { pos, .. }) => assert_eq!(pos, 8),
            other => panic!("{other:?}"),
        }
        match parse("D[E[R(1,2)]]") {
            Err(Error::Parse { pos, .. }) => assert_eq!(pos, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("E[E[D[R(1,2)]]]"), Err(Error::Parse { pos: 2, .. })));
        assert!(matches!(parse("   "), Err(Error::Parse { pos: 0, .. })));
        assert!(matches!(parse("E[R(1,2)]"), Err(Error::Parse { .. })));
        assert!(matches!(parse("E[D[S(w,1,1)]]"), Err(Error::Parse { pos: 6, .. })));
        assert!(matches!(parse("E[D[R(0,1)]]"), Err(Error::Parse { .. })));
    }

    #[test]
    fn degree_cap() {
        assert!(parse("E[D[R(1,1)*R(1,1)]]").is_ok());
        assert!(parse("E[D[R(1,1)*R(1,1)*h(1)]]").is_err());
        assert!(parse("E[D[R(1,1)*R(1,2) + R(2,2)*R(2,3)]]").is_ok());
        assert!(parse("E[G[R(1,1)*R(1,1)*R(1,1)]]").is_ok());
    }

    #[test]
    fn canonical_printing() {
        assert_eq!(print_canonical(&parse("E[D[R(2,1)]]").unwrap()), "E[D[R(1,2)]]");
        let e = parse("E[0.5*D[R(1,2)]]").unwrap();
        assert_eq!(print_canonical(&e), "E[0.5*D[R(1,2)]]");
        assert_eq!(print_canonical(&e), print_canonical(&parse(&print_canonical(&e)).unwrap()));
        let e = parse("E[D[ (R(1,1) - R(1,2)) * h(1) ]] - -2*beta*J").unwrap();
        assert_eq!(print_canonical(&e), "E[D[(R(1,1) - R(1,2))*h(1)]] - -2.0*beta*J");
        let e = parse("1 - (2 - 3)").unwrap();
        assert_eq!(print_canonical(&e), "1.0 - (2.0 - 3.0)");
        assert_eq!(parse("1.5e-3").unwrap(), Expr::Num(1.5e-3));
    }

    #[test]
    fn expansion_merges_terms() {
        let e = parse("D[(R(1,2) - R(2,1))*h(1)]").unwrap();
        let Expr::D(body) = e else { panic!() };
        assert!(expand_block(&body, 1.0, 1.0).unwrap().is_empty());
        let e = parse("D[beta*J*(R(1,1) + 2*R(1,1))]").unwrap();
        let Expr::D(body) = e else { panic!() };
        let t = expand_block(&body, 2.0, 0.5).unwrap();
        assert_eq!(t, vec![AtomTerm::new(3.0, vec![Atom::Overlap { a: 1, b: 1 }])]);
    }

    #[test]
    fn identity_file() {
        let text = "# comment\n\nhL ; exact ; E[D[h(1)]] ; beta*J*E[D[R(1,1) - R(1,2)]] # trailing\n";
        let ids = parse_identity_file(text).unwrap();
        assert_eq!(ids.len(), 1);
        assert_eq!(ids[0].name, "hL");
        assert_eq!(ids[0].kind, IdentityKind::Exact);
        assert!(parse_identity_file("x ; sometimes ; 1 ; 1").is_err());
        assert!(parse_identity_file("x ; exact ; 1").is_err());
        match parse_identity_line("x ; exact ; E[D[R(1,)]] ; 1") {
            Err(Error::Parse { pos, .. }) => assert_eq!(pos, 20),
            other => panic!("{other:?}"),
        }
    }

    // random ASTs respecting the nesting rules

    fn leaf_op() -> impl Strategy<Value = Expr> {
        prop_oneof![
            (1usize..4, 1usize..4).prop_map(|(a, b)| Expr::overlap(a, b)),
            (1usize..4).prop_map(Expr::Field),
            (0usize..3, 1usize..5, 1usize..4).prop_map(|(ax, r, a)| Expr::Spin { axis: Axis::ALL[ax], range: r, replica: a }),
        ]
    }

    fn num() -> impl Strategy<Value = Expr> {
        prop_oneof![
            (0u32..1000).prop_map(|k| Expr::Num(k as f64 / 8.0)),
            (0.0f64..1e3).prop_map(Expr::Num),
            Just(Expr::Beta),
            Just(Expr::Coupling),
        ]
    }

    fn arith(leaf: BoxedStrategy<Expr>, depth: u32) -> BoxedStrategy<Expr> {
        leaf.prop_recursive(depth, 16, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
                (inner.clone(), inner).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
            ]
        })
        .boxed()
    }

    fn block_body() -> BoxedStrategy<Expr> {
        // two factors keep every replica within the degree cap
        let op_or_num = prop_oneof![leaf_op(), num()].boxed();
        let lin = arith(op_or_num, 1);
        prop_oneof![
            lin.clone(),
            (lin.clone(), lin).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b)))
        ]
        .boxed()
    }

    fn e_body() -> BoxedStrategy<Expr> {
        let blk = prop_oneof![
            block_body().prop_map(|x| Expr::D(Box::new(x))),
            block_body().prop_map(|x| Expr::G(Box::new(x))),
            num(),
        ]
        .boxed();
        arith(blk, 2)
    }

    fn top() -> BoxedStrategy<Expr> {
        let leaf = prop_oneof![e_body().prop_map(|x| Expr::E(Box::new(x))), num()].boxed();
        arith(leaf, 2)
    }

    fn depth(e: &Expr) -> usize {
        match e {
            Expr::D(x) | Expr::E(x) | Expr::G(x) | Expr::Neg(x) => 1 + depth(x),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => 1 + depth(a).max(depth(b)),
            _ => 0,
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn print_parse_round_trip(e in top()) {
            prop_assume!(validate(&e).is_ok());
            let text = print_canonical(&e);
            let back = parse(&text).unwrap();
            prop_assert_eq!(&back, &e, "{}", text);
            prop_assert_eq!(print_canonical(&back), text);
        }

        #[test]
        fn round_trip_shallow(e in top().prop_filter("depth ≤ 4", |e| depth(e) <= 4)) {
            prop_assume!(validate(&e).is_ok());
            prop_assert_eq!(parse(&print_canonical(&e)).unwrap(), e);
        }
    }
}
