use super::ast::Formula;

/// A conjunction of possibly negated leaves: `(leaf, negated)`.
pub type Conjunct<L> = Vec<(L, bool)>;

impl<L: Clone + PartialEq> Formula<L> {
    /// Pushes negations down to the leaves.
    pub fn to_nnf(&self) -> Formula<L> {
        self.nnf(false)
    }

    fn nnf(&self, negate: bool) -> Formula<L> {
        match self {
            Formula::True if negate => Formula::Or(Vec::new()),
            Formula::True => Formula::True,
            Formula::Leaf(l) if negate => Formula::Not(Box::new(Formula::Leaf(l.clone()))),
            Formula::Leaf(l) => Formula::Leaf(l.clone()),
            Formula::Not(inner) => inner.nnf(!negate),
            Formula::And(items) => {
                let items = items.iter().map(|f| f.nnf(negate)).collect();
                if negate {
                    Formula::Or(items)
                } else {
                    Formula::And(items)
                }
            }
            Formula::Or(items) => {
                let items = items.iter().map(|f| f.nnf(negate)).collect();
                if negate {
                    Formula::And(items)
                } else {
                    Formula::Or(items)
                }
            }
        }
    }

    /// Disjunctive normal form. An empty outer list is `false`; an empty
    /// conjunct is `true`. Conjuncts containing a leaf and its negation are
    /// dropped, and repeated leaves inside a conjunct are merged.
    pub fn to_dnf(&self) -> Vec<Conjunct<L>> {
        fn go<L: Clone + PartialEq>(f: &Formula<L>) -> Vec<Conjunct<L>> {
            match f {
                Formula::True => vec![Vec::new()],
                Formula::Leaf(l) => vec![vec![(l.clone(), false)]],
                Formula::Not(inner) => match inner.as_ref() {
                    Formula::Leaf(l) => vec![vec![(l.clone(), true)]],
                    _ => unreachable!("formula is in negation normal form"),
                },
                Formula::Or(items) => items.iter().flat_map(go).collect(),
                Formula::And(items) => {
                    let mut acc: Vec<Conjunct<L>> = vec![Vec::new()];
                    for it in items {
                        let rhs = go(it);
                        let mut next = Vec::with_capacity(acc.len() * rhs.len());
                        for a in &acc {
                            for b in &rhs {
                                if let Some(c) = merge(a, b) {
                                    next.push(c);
                                }
                            }
                        }
                        acc = next;
                    }
                    acc
                }
            }
        }
        fn merge<L: Clone + PartialEq>(a: &Conjunct<L>, b: &Conjunct<L>) -> Option<Conjunct<L>> {
            let mut out = a.clone();
            for (leaf, neg) in b {
                if out.iter().any(|(l, n)| l == leaf && n != neg) {
                    return None;
                }
                if !out.iter().any(|(l, n)| l == leaf && n == neg) {
                    out.push((leaf.clone(), *neg));
                }
            }
            Some(out)
        }
        let mut out: Vec<Conjunct<L>> = Vec::new();
        for c in go(&self.to_nnf()) {
            if merge(&Vec::new(), &c).is_some() && !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }

    pub fn leaves(&self) -> Vec<&L> {
        let mut out = Vec::new();
        fn go<'a, L>(f: &'a Formula<L>, out: &mut Vec<&'a L>) {
            match f {
                Formula::True => {}
                Formula::Leaf(l) => out.push(l),
                Formula::Not(inner) => go(inner, out),
                Formula::And(items) | Formula::Or(items) => items.iter().for_each(|i| go(i, out)),
            }
        }
        go(self, &mut out);
        out
    }

    /// Evaluates under a truth assignment.
    pub fn eval(&self, truth: &mut dyn FnMut(&L) -> bool) -> bool {
        match self {
            Formula::True => true,
            Formula::Leaf(l) => truth(l),
            Formula::Not(inner) => !inner.eval(truth),
            Formula::And(items) => items.iter().all(|i| i.eval(truth)),
            Formula::Or(items) => items.iter().any(|i| i.eval(truth)),
        }
    }

    pub fn map_leaves<M>(&self, f: &mut dyn FnMut(&L) -> M) -> Formula<M> {
        match self {
            Formula::True => Formula::True,
            Formula::Leaf(l) => Formula::Leaf(f(l)),
            Formula::Not(inner) => Formula::Not(Box::new(inner.map_leaves(f))),
            Formula::And(items) => Formula::And(items.iter().map(|i| i.map_leaves(f)).collect()),
            Formula::Or(items) => Formula::Or(items.iter().map(|i| i.map_leaves(f)).collect()),
        }
    }

    pub fn has_negation(&self) -> bool {
        match self {
            Formula::Not(_) => true,
            Formula::True | Formula::Leaf(_) => false,
            Formula::And(items) | Formula::Or(items) => items.iter().any(Formula::has_negation),
        }
    }
}
