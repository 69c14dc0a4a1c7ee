//! Multisets of ground terms: the agent resource pools.
//!
//! Terms are bucketed by functor/arity so the matcher can enumerate only
//! plausible candidates for a pattern. Bucket iteration order agrees with
//! the canonical term order, which keeps matching deterministic.

use std::collections::BTreeMap;

use crate::term::{Symbol, Term};

/// Bucket key: which "kind" of resource a term is.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum ResKey {
    Num,
    Str,
    Sym(Symbol, usize),
}

fn res_key(term: &Term) -> ResKey {
    match term {
        Term::Int(_) | Term::Rat(_) => ResKey::Num,
        Term::Str(_) => ResKey::Str,
        Term::Atom(s) => ResKey::Sym(s.clone(), 0),
        Term::App(s, args) => ResKey::Sym(s.clone(), args.len()),
        Term::Var(_) => unreachable!("pools hold only ground terms"),
    }
}

#[derive(Clone, Default, PartialEq, Eq)]
pub struct Multiset {
    buckets: BTreeMap<ResKey, BTreeMap<Term, u32>>,
    len: usize,
}

impl Multiset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_terms<I: IntoIterator<Item = Term>>(terms: I) -> Self {
        let mut m = Self::new();
        for t in terms {
            m.insert(t);
        }
        m
    }

    /// Total number of resources, counting multiplicity.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn insert(&mut self, term: Term) {
        debug_assert!(term.is_ground(), "pool term must be ground: {term}");
        *self
            .buckets
            .entry(res_key(&term))
            .or_default()
            .entry(term)
            .or_insert(0) += 1;
        self.len += 1;
    }

    pub fn count(&self, term: &Term) -> u32 {
        self.buckets
            .get(&res_key(term))
            .and_then(|b| b.get(term))
            .copied()
            .unwrap_or(0)
    }

    pub fn contains(&self, term: &Term) -> bool {
        self.count(term) > 0
    }

    /// Remove one copy; returns false if the term is absent.
    pub fn remove_one(&mut self, term: &Term) -> bool {
        let key = res_key(term);
        let Some(bucket) = self.buckets.get_mut(&key) else {
            return false;
        };
        let Some(n) = bucket.get_mut(term) else {
            return false;
        };
        *n -= 1;
        if *n == 0 {
            bucket.remove(term);
            if bucket.is_empty() {
                self.buckets.remove(&key);
            }
        }
        self.len -= 1;
        true
    }

    pub fn clear(&mut self) {
        self.buckets.clear();
        self.len = 0;
    }

    /// Distinct terms with multiplicities, in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (&Term, u32)> {
        self.buckets.values().flat_map(|b| b.iter().map(|(t, n)| (t, *n)))
    }

    /// All resources expanded by multiplicity, in canonical order.
    pub fn expanded(&self) -> Vec<Term> {
        let mut out = Vec::with_capacity(self.len);
        for (t, n) in self.iter() {
            for _ in 0..n {
                out.push(t.clone());
            }
        }
        out
    }

    /// Candidate pool elements that could match `pattern`, in canonical order.
    /// A variable pattern enumerates the whole pool; a symbolic pattern only
    /// its functor/arity bucket; a literal only itself.
    pub fn candidates(&self, pattern: &Term) -> Vec<(Term, u32)> {
        match pattern {
            Term::Var(_) => self.iter().map(|(t, n)| (t.clone(), n)).collect(),
            Term::App(f, args) => self.bucket_items(&ResKey::Sym(f.clone(), args.len())),
            Term::Atom(s) => self.bucket_items(&ResKey::Sym(s.clone(), 0)),
            lit => {
                let n = self.count(lit);
                if n > 0 {
                    vec![(lit.clone(), n)]
                } else {
                    vec![]
                }
            }
        }
    }

    fn bucket_items(&self, key: &ResKey) -> Vec<(Term, u32)> {
        self.buckets
            .get(key)
            .map(|b| b.iter().map(|(t, n)| (t.clone(), *n)).collect())
            .unwrap_or_default()
    }
}

impl std::fmt::Debug for Multiset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{")?;
        for (i, (t, n)) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            if n > 1 {
                write!(f, "{t} x{n}")?;
            } else {
                write!(f, "{t}")?;
            }
        }
        write!(f, "}}")
    }
}
