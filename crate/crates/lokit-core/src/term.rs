//! Ground and pattern terms: the resource language of the kernel.
//!
//! A term is either a number (integer or exact rational), a quoted string,
//! an atom (`trigger`, `last`), a compound application (`msg-reply(srv1,7,42)`)
//! or a pattern variable (`Id`, `Result`). Variables are only legal inside
//! rule patterns; every term stored in an agent pool is ground.
//!
//! Terms have a canonical total order (numbers, then strings, then symbolic
//! terms by functor name / arity / arguments, then variables) which the
//! matcher uses to make candidate selection deterministic, and a canonical
//! prefix syntax that round-trips through [`Term::parse`].

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_rational::Rational64;
use num_traits::Zero;

/// Interned-ish symbol: cheap to clone, ordered by content.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Symbol(Arc<str>);

impl Symbol {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for Symbol {
    fn from(s: &str) -> Self {
        Symbol(Arc::from(s))
    }
}

impl From<String> for Symbol {
    fn from(s: String) -> Self {
        Symbol(Arc::from(s.as_str()))
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::ops::Deref for Symbol {
    type Target = str;
    fn deref(&self) -> &str {
        &self.0
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Int(i64),
    /// Non-integral exact rational; integral values normalize to `Int`.
    Rat(Rational64),
    Str(String),
    Atom(Symbol),
    App(Symbol, Vec<Term>),
    Var(Symbol),
}

impl Term {
    pub fn atom(name: &str) -> Term {
        Term::Atom(name.into())
    }

    pub fn int(v: i64) -> Term {
        Term::Int(v)
    }

    /// Exact rational, normalized to `Int` when integral.
    pub fn rat(r: Rational64) -> Term {
        if r.is_integer() {
            Term::Int(r.to_integer())
        } else {
            Term::Rat(r)
        }
    }

    pub fn var(name: &str) -> Term {
        Term::Var(name.into())
    }

    /// Compound term; zero arguments normalize to an atom.
    pub fn app(functor: &str, args: Vec<Term>) -> Term {
        if args.is_empty() {
            Term::Atom(functor.into())
        } else {
            Term::App(functor.into(), args)
        }
    }

    pub fn functor(&self) -> Option<&Symbol> {
        match self {
            Term::Atom(s) => Some(s),
            Term::App(s, _) => Some(s),
            _ => None,
        }
    }

    pub fn args(&self) -> &[Term] {
        match self {
            Term::App(_, args) => args,
            _ => &[],
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Term::Int(v) => Some(*v),
            _ => None,
        }
    }

    /// Numeric value of an `Int` or `Rat` term.
    pub fn as_rational(&self) -> Option<Rational64> {
        match self {
            Term::Int(v) => Some(Rational64::from_integer(*v)),
            Term::Rat(r) => Some(*r),
            _ => None,
        }
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::App(_, args) => args.iter().all(Term::is_ground),
            _ => true,
        }
    }

    /// Variables occurring in this term, in first-occurrence order.
    pub fn collect_vars(&self, out: &mut Vec<Symbol>) {
        match self {
            Term::Var(v) => {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
            Term::App(_, args) => {
                for a in args {
                    a.collect_vars(out);
                }
            }
            _ => {}
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Term::Int(_) | Term::Rat(_) => 0,
            Term::Str(_) => 1,
            Term::Atom(..) | Term::App(..) => 2,
            Term::Var(_) => 3,
        }
    }

    /// Parse a term from its canonical syntax. See module docs for the grammar.
    pub fn parse(input: &str) -> Result<Term, ParseError> {
        let mut p = Parser {
            src: input.as_bytes(),
            pos: 0,
        };
        p.skip_ws();
        let t = p.term()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("trailing input after term"));
        }
        Ok(t)
    }
}

/// Canonical total order: numbers (by value) < strings < atoms/compounds
/// (by functor name, then arity, then arguments) < variables.
impl Ord for Term {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.rank().cmp(&other.rank()) {
            Ordering::Equal => {}
            ord => return ord,
        }
        match (self, other) {
            (Term::Int(a), Term::Int(b)) => a.cmp(b),
            (Term::Rat(a), Term::Rat(b)) => a.cmp(b),
            (Term::Int(a), Term::Rat(b)) => Rational64::from_integer(*a).cmp(b),
            (Term::Rat(a), Term::Int(b)) => a.cmp(&Rational64::from_integer(*b)),
            (Term::Str(a), Term::Str(b)) => a.cmp(b),
            (Term::Var(a), Term::Var(b)) => a.cmp(b),
            (a, b) => {
                let (fa, aa) = (a.functor().unwrap(), a.args());
                let (fb, ab) = (b.functor().unwrap(), b.args());
                fa.cmp(fb)
                    .then_with(|| aa.len().cmp(&ab.len()))
                    .then_with(|| aa.cmp(ab))
            }
        }
    }
}

impl PartialOrd for Term {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Int(v) => write!(f, "{v}"),
            Term::Rat(r) => write!(f, "{}/{}", r.numer(), r.denom()),
            Term::Str(s) => {
                write!(f, "\"")?;
                for c in s.chars() {
                    match c {
                        '"' => write!(f, "\\\"")?,
                        '\\' => write!(f, "\\\\")?,
                        '\n' => write!(f, "\\n")?,
                        c => write!(f, "{c}")?,
                    }
                }
                write!(f, "\"")
            }
            Term::Atom(s) => write!(f, "{s}"),
            Term::App(s, args) => {
                write!(f, "{s}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
            Term::Var(v) => write!(f, "{v}"),
        }
    }
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl std::str::FromStr for Term {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Term::parse(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("term syntax error at byte {pos}: {msg}")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: &str) -> ParseError {
        ParseError {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ') | Some(b'\t')) {
            self.pos += 1;
        }
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        match self.peek() {
            None => Err(self.err("expected term")),
            Some(c) if c == b'-' || c.is_ascii_digit() => self.number(),
            Some(b'"') => self.string(),
            Some(c) if c.is_ascii_uppercase() || c == b'_' => Ok(Term::Var(self.name(|c| {
                c.is_ascii_alphanumeric() || c == b'_'
            }))),
            Some(c) if c.is_ascii_lowercase() => {
                let sym = self.name(|c| c.is_ascii_alphanumeric() || matches!(c, b'_' | b'-' | b'.'));
                if self.peek() == Some(b'(') {
                    self.pos += 1;
                    let mut args = Vec::new();
                    loop {
                        self.skip_ws();
                        args.push(self.term()?);
                        self.skip_ws();
                        match self.peek() {
                            Some(b',') => self.pos += 1,
                            Some(b')') => {
                                self.pos += 1;
                                break;
                            }
                            _ => return Err(self.err("expected ',' or ')'")),
                        }
                    }
                    Ok(Term::App(sym, args))
                } else {
                    Ok(Term::Atom(sym))
                }
            }
            Some(_) => Err(self.err("unexpected character")),
        }
    }

    fn name(&mut self, cont: impl Fn(u8) -> bool) -> Symbol {
        let start = self.pos;
        self.pos += 1;
        while self.peek().map_or(false, &cont) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .expect("ascii name")
            .into()
    }

    fn number(&mut self) -> Result<Term, ParseError> {
        let neg = self.peek() == Some(b'-');
        if neg {
            self.pos += 1;
        }
        let whole = self.digits()?;
        match self.peek() {
            Some(b'/') => {
                self.pos += 1;
                let den = self.digits()?;
                if den.is_zero() {
                    return Err(self.err("zero denominator"));
                }
                let r = Rational64::new(whole, den);
                Ok(Term::rat(if neg { -r } else { r }))
            }
            Some(b'.') => {
                self.pos += 1;
                let start = self.pos;
                let frac = self.digits()?;
                let places = (self.pos - start) as u32;
                let den = 10i64
                    .checked_pow(places)
                    .ok_or_else(|| self.err("too many decimal places"))?;
                let r = Rational64::new(whole * den + frac, den);
                Ok(Term::rat(if neg { -r } else { r }))
            }
            _ => Ok(Term::Int(if neg { -whole } else { whole })),
        }
    }

    fn string(&mut self) -> Result<Term, ParseError> {
        self.pos += 1; // opening quote
        let mut out = String::new();
        loop {
            match self.peek() {
                None => return Err(self.err("unterminated string")),
                Some(b'"') => {
                    self.pos += 1;
                    return Ok(Term::Str(out));
                }
                Some(b'\\') => {
                    self.pos += 1;
                    match self.peek() {
                        Some(b'"') => out.push('"'),
                        Some(b'\\') => out.push('\\'),
                        Some(b'n') => out.push('\n'),
                        _ => return Err(self.err("bad escape")),
                    }
                    self.pos += 1;
                }
                Some(_) => {
                    let start = self.pos;
                    while !matches!(self.peek(), None | Some(b'"') | Some(b'\\')) {
                        self.pos += 1;
                    }
                    out.push_str(
                        std::str::from_utf8(&self.src[start..self.pos])
                            .map_err(|_| self.err("invalid utf-8 in string"))?,
                    );
                }
            }
        }
    }

    fn digits(&mut self) -> Result<i64, ParseError> {
        let start = self.pos;
        while self.peek().map_or(false, |c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err("expected digits"));
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| self.err("integer out of range"))
    }
}

/// Substitution from variable names to ground terms, built up during matching.
pub type Binding = BTreeMap<Symbol, Term>;

/// Substitute bound variables; unbound variables are left in place.
pub fn apply_binding(term: &Term, binding: &Binding) -> Term {
    match term {
        Term::Var(v) => binding.get(v).cloned().unwrap_or_else(|| term.clone()),
        Term::App(f, args) => {
            Term::App(f.clone(), args.iter().map(|a| apply_binding(a, binding)).collect())
        }
        t => t.clone(),
    }
}

/// Substitute and require the result to be ground.
pub fn instantiate(term: &Term, binding: &Binding) -> Result<Term, Symbol> {
    match term {
        Term::Var(v) => binding.get(v).cloned().ok_or_else(|| v.clone()),
        Term::App(f, args) => {
            let inst: Result<Vec<_>, _> = args.iter().map(|a| instantiate(a, binding)).collect();
            Ok(Term::App(f.clone(), inst?))
        }
        t => Ok(t.clone()),
    }
}

/// One-way match of a pattern against a ground term, extending `binding`.
/// Newly bound variable names are pushed onto `trail` so callers can undo.
pub fn match_pattern(pattern: &Term, value: &Term, binding: &mut Binding, trail: &mut Vec<Symbol>) -> bool {
    match (pattern, value) {
        (Term::Var(v), _) => match binding.get(v) {
            Some(bound) => bound == value,
            None => {
                binding.insert(v.clone(), value.clone());
                trail.push(v.clone());
                true
            }
        },
        (Term::App(f, args), Term::App(g, brgs)) => {
            f == g
                && args.len() == brgs.len()
                && args.iter().zip(brgs).all(|(p, v)| match_pattern(p, v, binding, trail))
        }
        (p, v) => p == v,
    }
}

/// Remove all bindings made after `mark` (a previous `trail.len()`).
pub fn undo_trail(binding: &mut Binding, trail: &mut Vec<Symbol>, mark: usize) {
    while trail.len() > mark {
        let v = trail.pop().unwrap();
        binding.remove(&v);
    }
}
