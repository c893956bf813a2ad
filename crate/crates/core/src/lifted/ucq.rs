use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::dsl::{Atom, Literal, Term};

/// A conjunctive query: a conjunction of literals whose non-free variables
/// are existentially quantified.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Cq {
    pub literals: Vec<Literal>,
}

impl Cq {
    pub fn new(literals: Vec<Literal>) -> Self {
        Cq { literals }
    }

    pub fn is_empty(&self) -> bool {
        self.literals.is_empty()
    }

    pub fn variables(&self) -> BTreeSet<&str> {
        self.literals.iter().flat_map(|l| l.atom.variables()).collect()
    }

    pub fn existential<'a>(&'a self, bound: &BTreeSet<String>) -> BTreeSet<&'a str> {
        self.variables()
            .into_iter()
            .filter(|v| !bound.contains(*v))
            .collect()
    }

    pub fn substitute(&self, subst: &HashMap<String, Term>) -> Cq {
        Cq {
            literals: self
                .literals
                .iter()
                .map(|l| substitute_literal(l, subst))
                .collect(),
        }
    }

    /// Sorts and deduplicates literals.
    pub(crate) fn canonicalize(&mut self) {
        self.literals.sort();
        self.literals.dedup();
    }

    pub fn relations(&self) -> BTreeSet<&str> {
        self.literals.iter().map(|l| l.atom.predicate.as_str()).collect()
    }
}

pub(crate) fn substitute_literal(l: &Literal, subst: &HashMap<String, Term>) -> Literal {
    Literal {
        atom: Atom {
            predicate: l.atom.predicate.clone(),
            args: l
                .atom
                .args
                .iter()
                .map(|t| match t {
                    Term::Var(v) => subst.get(v).cloned().unwrap_or_else(|| t.clone()),
                    Term::Const(_) => t.clone(),
                })
                .collect(),
        },
        negated: l.negated,
    }
}

impl fmt::Display for Cq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.literals.is_empty() {
            return f.write_str("true");
        }
        for (i, l) in self.literals.iter().enumerate() {
            if i > 0 {
                f.write_str(" & ")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

/// A union of conjunctive queries with free (answer) variables. Each
/// disjunct is quantified separately.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Ucq {
    pub free: Vec<String>,
    pub disjuncts: Vec<Cq>,
}

impl Ucq {
    pub fn new(free: Vec<String>, disjuncts: Vec<Cq>) -> Self {
        Ucq { free, disjuncts }
    }

    pub fn is_false(&self) -> bool {
        self.disjuncts.is_empty()
    }

    pub fn free_set(&self) -> BTreeSet<String> {
        self.free.iter().cloned().collect()
    }

    pub fn relations(&self) -> BTreeSet<&str> {
        self.disjuncts.iter().flat_map(|c| c.relations()).collect()
    }

    /// Renames variables consistently across all disjuncts (free variables
    /// included) and reverses the order of literals and disjuncts when
    /// `reverse` is set. Used to check that verdicts do not depend on naming.
    pub fn renamed(&self, rename: &dyn Fn(&str) -> String, reverse: bool) -> Ucq {
        let free = self.free.iter().map(|v| rename(v)).collect();
        let mut disjuncts: Vec<Cq> = self
            .disjuncts
            .iter()
            .map(|c| {
                let subst: HashMap<String, Term> = c
                    .variables()
                    .into_iter()
                    .map(|v| (v.to_string(), Term::Var(rename(v))))
                    .collect();
                let mut cq = c.substitute(&subst);
                if reverse {
                    cq.literals.reverse();
                }
                cq
            })
            .collect();
        if reverse {
            disjuncts.reverse();
        }
        Ucq { free, disjuncts }
    }
}

impl fmt::Display for Ucq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q({}) = ", self.free.join(", "))?;
        if self.disjuncts.is_empty() {
            return f.write_str("false");
        }
        let free = self.free_set();
        for (i, cq) in self.disjuncts.iter().enumerate() {
            if i > 0 {
                f.write_str(" | ")?;
            }
            let ex: Vec<&str> = cq.existential(&free).into_iter().collect();
            if ex.is_empty() {
                write!(f, "({cq})")?;
            } else {
                write!(f, "(exists {}: {cq})", ex.join(", "))?;
            }
        }
        Ok(())
    }
}

/// Union-find unifier over terms. Variables rejected by the `flexible`
/// predicate behave like unknown constants.
#[derive(Debug, Default, Clone)]
pub(crate) struct Unifier {
    parent: BTreeMap<Term, Term>,
}

impl Unifier {
    fn find(&mut self, t: &Term) -> Term {
        let mut cur = t.clone();
        while let Some(p) = self.parent.get(&cur) {
            if *p == cur {
                break;
            }
            cur = p.clone();
        }
        cur
    }

    /// Unifies two terms. `flexible` decides which variables may be bound.
    /// On failure returns the two clashing representatives.
    pub(crate) fn unify(
        &mut self,
        a: &Term,
        b: &Term,
        flexible: &dyn Fn(&str) -> bool,
    ) -> Result<(), (Term, Term)> {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra == rb {
            return Ok(());
        }
        let is_flex = |t: &Term| matches!(t, Term::Var(v) if flexible(v));
        if is_flex(&ra) {
            self.parent.insert(ra, rb);
            Ok(())
        } else if is_flex(&rb) {
            self.parent.insert(rb, ra);
            Ok(())
        } else {
            Err((ra, rb))
        }
    }

    pub(crate) fn resolve(&mut self, t: &Term) -> Term {
        self.find(t)
    }
}

/// Could the two literals denote the same ground tuple for some valuation?
/// Variables are renamed apart except for the bound (column) variables,
/// which are shared between both sides.
pub(crate) fn may_overlap(a: &Literal, b: &Literal, bound: &BTreeSet<String>) -> bool {
    if a.atom.predicate != b.atom.predicate || a.atom.arity() != b.atom.arity() {
        return false;
    }
    let tag = |t: &Term, side: &str| match t {
        Term::Var(v) if !bound.contains(v) => Term::Var(format!("{side}#{v}")),
        other => other.clone(),
    };
    let mut u = Unifier::default();
    a.atom.args.iter().zip(&b.atom.args).all(|(x, y)| {
        // every variable may be bound here: bound variables stand for values
        // that could coincide with anything
        u.unify(&tag(x, "l"), &tag(y, "r"), &|_| true).is_ok()
    })
}

/// Searches for a homomorphism from `from` into `to` that fixes constants
/// and bound variables and preserves literal signs. Its existence means the
/// conjunction `to` implies the conjunction `from`.
pub(crate) fn homomorphism(from: &[Literal], to: &[Literal], bound: &BTreeSet<String>) -> bool {
    fn extend(
        i: usize,
        from: &[Literal],
        to: &[Literal],
        bound: &BTreeSet<String>,
        map: &mut HashMap<String, Term>,
    ) -> bool {
        let Some(src) = from.get(i) else {
            return true;
        };
        for dst in to {
            if dst.negated != src.negated
                || dst.atom.predicate != src.atom.predicate
                || dst.atom.arity() != src.atom.arity()
            {
                continue;
            }
            let mut added = Vec::new();
            let mut ok = true;
            for (s, d) in src.atom.args.iter().zip(&dst.atom.args) {
                match s {
                    Term::Var(v) if !bound.contains(v) => match map.get(v) {
                        Some(t) if t != d => ok = false,
                        Some(_) => {}
                        None => {
                            map.insert(v.clone(), d.clone());
                            added.push(v.clone());
                        }
                    },
                    fixed => ok = fixed == d,
                }
                if !ok {
                    break;
                }
            }
            if ok && extend(i + 1, from, to, bound, map) {
                return true;
            }
            for v in added {
                map.remove(&v);
            }
        }
        false
    }
    extend(0, from, to, bound, &mut HashMap::new())
}
