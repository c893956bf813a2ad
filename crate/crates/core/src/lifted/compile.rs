use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use super::plan::Plan;
use super::ucq::{homomorphism, may_overlap, Cq, Ucq, Unifier};
use crate::dsl::{Literal, Term};
use crate::probdb::{Schema, Semantics};

/// Largest number of clauses produced when converting to conjunctive form.
const MAX_CLAUSES: usize = 4096;
/// Largest number of items combined by inclusion–exclusion.
const MAX_INCLUSION_EXCLUSION: usize = 12;
const MAX_DEPTH: usize = 96;

/// Outcome of the safety check.
#[derive(Debug, Clone, PartialEq)]
pub enum SafetyVerdict {
    Safe(Plan),
    /// `witness` is the sub-query (bound variables listed as free) on which
    /// no rule applies.
    Unsafe { witness: Ucq, reason: String },
}

impl SafetyVerdict {
    pub fn is_safe(&self) -> bool {
        matches!(self, SafetyVerdict::Safe(_))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error("query is not liftable ({reason}); witness: {witness}. Use the oracle engine on small inputs instead")]
    Unsupported { witness: Ucq, reason: String },
    #[error("relation `{0}` is not in the database")]
    UnknownRelation(String),
    #[error("relation `{relation}` has arity {expected}, query uses {found}")]
    ArityMismatch {
        relation: String,
        expected: usize,
        found: usize,
    },
}

struct Failure {
    witness: Vec<Cq>,
    bound: BTreeSet<String>,
    reason: String,
}

type Lifted = Result<Plan, Failure>;

struct Lifter<'a> {
    schema: &'a Schema,
}

fn fail(q: &[Cq], bound: &BTreeSet<String>, reason: impl Into<String>) -> Failure {
    Failure {
        witness: q.to_vec(),
        bound: bound.clone(),
        reason: reason.into(),
    }
}

impl<'a> Lifter<'a> {
    fn is_choice(&self, relation: &str) -> bool {
        self.schema
            .get(relation)
            .is_some_and(|r| r.semantics == Semantics::Choice)
    }

    fn literals_dependent(&self, a: &Literal, b: &Literal, bound: &BTreeSet<String>) -> bool {
        a.atom.predicate == b.atom.predicate && (self.is_choice(&a.atom.predicate) || may_overlap(a, b, bound))
    }

    fn dependent(&self, a: &[Literal], b: &[Literal], bound: &BTreeSet<String>) -> bool {
        a.iter()
            .any(|x| b.iter().any(|y| self.literals_dependent(x, y, bound)))
    }

    /// Unifies the arguments of positive atoms over the same choice relation.
    /// Returns `None` when two such atoms can never hold together. Pairs that
    /// clash only on bound variables are left in place.
    fn unify_choices(&self, cq: &Cq, bound: &BTreeSet<String>) -> Option<Cq> {
        let flexible = |v: &str| !bound.contains(v);
        let mut by_relation: BTreeMap<&str, Vec<&Literal>> = BTreeMap::new();
        for l in cq.literals.iter().filter(|l| !l.negated) {
            if self.is_choice(&l.atom.predicate) {
                by_relation.entry(&l.atom.predicate).or_default().push(l);
            }
        }
        let mut unifier = Unifier::default();
        let mut changed = false;
        for lits in by_relation.values().filter(|l| l.len() > 1) {
            let first = lits[0];
            for other in &lits[1..] {
                let mut trial = unifier.clone();
                let mut blocked = false;
                for (x, y) in first.atom.args.iter().zip(&other.atom.args) {
                    if let Err((p, q)) = trial.unify(x, y, &flexible) {
                        if matches!((&p, &q), (Term::Const(_), Term::Const(_))) {
                            return None;
                        }
                        blocked = true;
                    }
                }
                if !blocked {
                    unifier = trial;
                    changed = true;
                }
            }
        }
        if !changed {
            return Some(cq.clone());
        }
        let subst: HashMap<String, Term> = cq
            .variables()
            .into_iter()
            .map(|v| (v.to_string(), unifier.resolve(&Term::Var(v.to_string()))))
            .collect();
        Some(cq.substitute(&subst))
    }

    /// Splits a conjunction into components connected by existential
    /// variables. Literals without existential variables stand alone.
    fn components(&self, cq: &Cq, bound: &BTreeSet<String>) -> Vec<Cq> {
        let n = cq.literals.len();
        let mut group: Vec<usize> = (0..n).collect();
        fn root(g: &mut [usize], mut i: usize) -> usize {
            while g[i] != i {
                g[i] = g[g[i]];
                i = g[i];
            }
            i
        }
        let mut owner: HashMap<&str, usize> = HashMap::new();
        for (i, l) in cq.literals.iter().enumerate() {
            for v in l.atom.variables().filter(|v| !bound.contains(*v)) {
                if let Some(&j) = owner.get(v) {
                    let (a, b) = (root(&mut group, i), root(&mut group, j));
                    group[a.max(b)] = a.min(b);
                } else {
                    owner.insert(v, i);
                }
            }
        }
        let mut comps: BTreeMap<usize, Vec<Literal>> = BTreeMap::new();
        for (i, l) in cq.literals.iter().enumerate() {
            let r = root(&mut group, i);
            comps.entry(r).or_default().push(l.clone());
        }
        comps.into_values().map(Cq::new).collect()
    }

    fn normalize_cq(&self, cq: &Cq, bound: &BTreeSet<String>) -> Option<Cq> {
        let mut cq = self.unify_choices(cq, bound)?;
        cq.canonicalize();
        let contradictory = cq
            .literals
            .iter()
            .any(|l| l.negated && cq.literals.iter().any(|m| !m.negated && m.atom == l.atom));
        if contradictory {
            return None;
        }
        // drop components implied by the rest of the conjunction
        let mut comps = self.components(&cq, bound);
        let mut i = 0;
        while i < comps.len() && comps.len() > 1 {
            let rest: Vec<Literal> = comps
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, c)| c.literals.iter().cloned())
                .collect();
            if homomorphism(&comps[i].literals, &rest, bound) {
                comps.remove(i);
            } else {
                i += 1;
            }
        }
        let mut out = Cq::new(comps.into_iter().flat_map(|c| c.literals).collect());
        out.canonicalize();
        Some(out)
    }

    /// Normal form of a union: normalized disjuncts with those implied by
    /// another disjunct removed. `[]` is false; a single empty disjunct is true.
    fn normalize(&self, q: &[Cq], bound: &BTreeSet<String>) -> Vec<Cq> {
        let mut kept: Vec<Cq> = Vec::new();
        for cq in q {
            let Some(cq) = self.normalize_cq(cq, bound) else {
                continue;
            };
            if cq.is_empty() {
                return vec![Cq::default()];
            }
            if kept.iter().any(|k| homomorphism(&k.literals, &cq.literals, bound)) {
                continue;
            }
            kept.retain(|k| !homomorphism(&cq.literals, &k.literals, bound));
            kept.push(cq);
        }
        kept
    }

    fn group_dependent(&self, items: &[Vec<Literal>], bound: &BTreeSet<String>) -> Vec<Vec<usize>> {
        let n = items.len();
        let mut group: Vec<usize> = (0..n).collect();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.dependent(&items[i], &items[j], bound) {
                    let (gi, gj) = (group[i], group[j]);
                    if gi != gj {
                        let (lo, hi) = (gi.min(gj), gi.max(gj));
                        group.iter_mut().filter(|g| **g == hi).for_each(|g| *g = lo);
                    }
                }
            }
        }
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, g) in group.into_iter().enumerate() {
            out.entry(g).or_default().push(i);
        }
        out.into_values().collect()
    }

    fn lift(&self, q: &[Cq], bound: &BTreeSet<String>, depth: usize) -> Lifted {
        if depth > MAX_DEPTH {
            return Err(fail(q, bound, "rule application did not terminate"));
        }
        let q = self.normalize(q, bound);
        if q.is_empty() {
            return Ok(Plan::Constant(0.0));
        }
        if q.iter().any(Cq::is_empty) {
            return Ok(Plan::Constant(1.0));
        }
        if q.len() == 1 {
            let cq = &q[0];
            if let Some(plan) = self.choice_selection(cq, bound, depth)? {
                return Ok(plan);
            }
            if cq.literals.len() == 1 && cq.existential(bound).is_empty() {
                let l = &cq.literals[0];
                let leaf = Plan::GroundLookup(l.atom.clone());
                return Ok(if l.negated {
                    Plan::Complement(Box::new(leaf))
                } else {
                    leaf
                });
            }
            let comps = self.components(cq, bound);
            if comps.len() > 1 {
                let lits: Vec<Vec<Literal>> = comps.iter().map(|c| c.literals.clone()).collect();
                let groups = self.group_dependent(&lits, bound);
                if groups.len() > 1 {
                    let children = groups
                        .iter()
                        .map(|g| {
                            let merged = Cq::new(g.iter().flat_map(|&i| lits[i].iter().cloned()).collect());
                            self.lift(&[merged], bound, depth + 1)
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    return Ok(join(children));
                }
                let items: Vec<Vec<Cq>> = comps.into_iter().map(|c| vec![c]).collect();
                return self.inclusion_exclusion(&q, &items, bound, depth);
            }
        } else {
            let lits: Vec<Vec<Literal>> = q.iter().map(|c| c.literals.clone()).collect();
            let groups = self.group_dependent(&lits, bound);
            if groups.len() > 1 {
                let children = groups
                    .iter()
                    .map(|g| {
                        let sub: Vec<Cq> = g.iter().map(|&i| q[i].clone()).collect();
                        self.lift(&sub, bound, depth + 1)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                return union(children).map_err(|r| fail(&q, bound, r));
            }
            let split: Vec<Vec<Cq>> = q.iter().map(|c| self.components(c, bound)).collect();
            if split.iter().any(|c| c.len() > 1) {
                return self.conjunctive_form(&q, &split, bound, depth);
            }
        }
        self.separator(&q, bound, depth)
    }

    /// Two atoms of one choice relation that only differ on bound variables
    /// or constants: the query holds only where those values coincide.
    fn choice_selection(&self, cq: &Cq, bound: &BTreeSet<String>, depth: usize) -> Result<Option<Plan>, Failure> {
        let flexible = |v: &str| !bound.contains(v);
        let positives: Vec<&Literal> = cq
            .literals
            .iter()
            .filter(|l| !l.negated && self.is_choice(&l.atom.predicate))
            .collect();
        for (i, a) in positives.iter().enumerate() {
            for b in &positives[i + 1..] {
                if a.atom.predicate != b.atom.predicate {
                    continue;
                }
                let mut u = Unifier::default();
                for (x, y) in a.atom.args.iter().zip(&b.atom.args) {
                    let Err((p, q)) = u.unify(x, y, &flexible) else {
                        continue;
                    };
                    let (column, value) = match (p, q) {
                        (Term::Var(c), other) | (other, Term::Var(c)) => (c, other),
                        _ => continue,
                    };
                    let subst = HashMap::from([(column.clone(), value.clone())]);
                    let mut inner = bound.clone();
                    inner.remove(&column);
                    let child = self.lift(&[cq.substitute(&subst)], &inner, depth + 1)?;
                    return Ok(Some(Plan::Selection {
                        column,
                        value,
                        child: Box::new(child),
                    }));
                }
            }
        }
        Ok(None)
    }

    /// `P(∧ F_i) = Σ_{S≠∅} (-1)^{|S|+1} P(∨_{i∈S} F_i)` where each item is a
    /// union of conjunctions.
    fn inclusion_exclusion(&self, whole: &[Cq], items: &[Vec<Cq>], bound: &BTreeSet<String>, depth: usize) -> Lifted {
        if items.len() > MAX_INCLUSION_EXCLUSION {
            return Err(fail(whole, bound, "too many terms for inclusion-exclusion"));
        }
        let mut terms = Vec::new();
        for mask in 1u32..(1 << items.len()) {
            let sub: Vec<Cq> = items
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .flat_map(|(_, it)| it.iter().cloned())
                .collect();
            let sign = if mask.count_ones() % 2 == 1 { 1 } else { -1 };
            terms.push((sign, self.lift(&sub, bound, depth + 1)?));
        }
        let columns = terms[0].1.column_set();
        if terms.iter().any(|(_, p)| p.column_set() != columns) {
            return Err(fail(whole, bound, "inclusion-exclusion over sub-queries with different bound variables"));
        }
        Ok(Plan::InclusionExclusion(terms))
    }

    /// Rewrites a union whose disjuncts have several components as a
    /// conjunction of clauses, each clause a union of single components.
    fn conjunctive_form(&self, q: &[Cq], split: &[Vec<Cq>], bound: &BTreeSet<String>, depth: usize) -> Lifted {
        let total = split.iter().try_fold(1usize, |acc, c| acc.checked_mul(c.len()));
        if total.is_none_or(|t| t > MAX_CLAUSES) {
            return Err(fail(q, bound, "conjunctive normal form is too large"));
        }
        let mut clauses: Vec<Vec<Cq>> = vec![Vec::new()];
        for comps in split {
            let mut next = Vec::with_capacity(clauses.len() * comps.len());
            for clause in &clauses {
                for c in comps {
                    let mut nc = clause.clone();
                    if !nc.contains(c) {
                        nc.push(c.clone());
                    }
                    next.push(nc);
                }
            }
            clauses = next;
        }
        let mut clauses: Vec<Vec<Cq>> = clauses.iter().map(|c| self.normalize(c, bound)).collect();
        // a clause that is always true contributes nothing to the conjunction
        clauses.retain(|c| !(c.len() == 1 && c[0].is_empty()));
        if clauses.iter().any(Vec::is_empty) {
            return Ok(Plan::Constant(0.0));
        }
        // drop clauses implied by another clause
        let implies = |a: &[Cq], b: &[Cq]| {
            a.iter()
                .all(|x| b.iter().any(|y| homomorphism(&y.literals, &x.literals, bound)))
        };
        let mut kept: Vec<Vec<Cq>> = Vec::new();
        for c in clauses {
            if kept.iter().any(|k| implies(k, &c)) {
                continue;
            }
            kept.retain(|k| !implies(&c, k));
            kept.push(c);
        }
        if kept.is_empty() {
            return Ok(Plan::Constant(1.0));
        }
        if kept.len() == 1 {
            return self.lift(&kept[0], bound, depth + 1);
        }
        let lits: Vec<Vec<Literal>> = kept
            .iter()
            .map(|c| c.iter().flat_map(|cq| cq.literals.iter().cloned()).collect())
            .collect();
        let groups = self.group_dependent(&lits, bound);
        if groups.len() > 1 {
            let children = groups
                .iter()
                .map(|g| {
                    if g.len() == 1 {
                        self.lift(&kept[g[0]], bound, depth + 1)
                    } else {
                        let items: Vec<Vec<Cq>> = g.iter().map(|&i| kept[i].clone()).collect();
                        self.inclusion_exclusion(q, &items, bound, depth)
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(join(children));
        }
        self.inclusion_exclusion(q, &kept, bound, depth)
    }

    fn separator(&self, q: &[Cq], bound: &BTreeSet<String>, depth: usize) -> Lifted {
        let candidates: Vec<Vec<String>> = q
            .iter()
            .map(|cq| {
                cq.existential(bound)
                    .into_iter()
                    .filter(|v| cq.literals.iter().all(|l| l.atom.variables().any(|w| w == *v)))
                    .map(str::to_string)
                    .collect()
            })
            .collect();
        if candidates.iter().any(Vec::is_empty) {
            return Err(fail(q, bound, "no separator variable"));
        }
        let has_choice = q
            .iter()
            .flat_map(|c| &c.literals)
            .any(|l| self.is_choice(&l.atom.predicate));
        let mut chosen = Vec::with_capacity(q.len());
        let mut reason = "no separator variable at consistent positions";
        let found = self.search_separator(q, &candidates, &mut chosen, &BTreeMap::new(), &mut |sep| {
            if !has_choice {
                return true;
            }
            reason = "separator does not cover a choice relation in every disjunct";
            // some choice relation must hold the separator in every disjunct
            let first: BTreeSet<&str> = q[0]
                .literals
                .iter()
                .filter(|l| !l.negated && self.is_choice(&l.atom.predicate))
                .map(|l| l.atom.predicate.as_str())
                .collect();
            first.into_iter().any(|rel| {
                q.iter().zip(sep).all(|(cq, x)| {
                    cq.literals.iter().any(|l| {
                        !l.negated && l.atom.predicate == rel && l.atom.variables().any(|w| w == x)
                    })
                })
            })
        });
        if !found {
            return Err(fail(q, bound, reason));
        }
        let name = fresh_name(&chosen[0], q, &chosen, bound);
        let renamed: Vec<Cq> = q
            .iter()
            .zip(&chosen)
            .map(|(cq, x)| cq.substitute(&HashMap::from([(x.clone(), Term::Var(name.clone()))])))
            .collect();
        let mut inner = bound.clone();
        inner.insert(name.clone());
        let child = Box::new(self.lift(&renamed, &inner, depth + 1)?);
        Ok(if has_choice {
            Plan::ExclusiveSum { variable: name, child }
        } else {
            Plan::IndependentProject { variable: name, child }
        })
    }

    /// Backtracking over one separator per disjunct, keeping the positions
    /// of the separator consistent per relation.
    fn search_separator(
        &self,
        q: &[Cq],
        candidates: &[Vec<String>],
        chosen: &mut Vec<String>,
        positions: &BTreeMap<String, BTreeSet<usize>>,
        accept: &mut dyn FnMut(&[String]) -> bool,
    ) -> bool {
        let i = chosen.len();
        if i == q.len() {
            return accept(chosen);
        }
        for x in &candidates[i] {
            let mut pos = positions.clone();
            let mut ok = true;
            for l in &q[i].literals {
                let here: BTreeSet<usize> = l
                    .atom
                    .args
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.as_var() == Some(x.as_str()))
                    .map(|(p, _)| p)
                    .collect();
                let entry = pos.entry(l.atom.predicate.clone()).or_insert_with(|| here.clone());
                *entry = entry.intersection(&here).copied().collect();
                if entry.is_empty() {
                    ok = false;
                    break;
                }
            }
            if ok {
                chosen.push(x.clone());
                if self.search_separator(q, candidates, chosen, &pos, accept) {
                    return true;
                }
                chosen.pop();
            }
        }
        false
    }
}

fn fresh_name(preferred: &str, q: &[Cq], chosen: &[String], bound: &BTreeSet<String>) -> String {
    let clashes = |name: &str| {
        bound.contains(name)
            || q.iter()
                .zip(chosen)
                .any(|(cq, x)| x != name && cq.variables().contains(name))
    };
    let mut name = preferred.to_string();
    while clashes(&name) {
        name.push('\'');
    }
    name
}

fn join(children: Vec<Plan>) -> Plan {
    let mut flat = Vec::new();
    for c in children {
        match c {
            Plan::IndependentJoin(inner) => flat.extend(inner),
            Plan::Constant(p) if p == 1.0 => {}
            other => flat.push(other),
        }
    }
    match flat.len() {
        0 => Plan::Constant(1.0),
        1 => flat.pop().expect("one child"),
        _ => Plan::IndependentJoin(flat),
    }
}

fn union(children: Vec<Plan>) -> Result<Plan, String> {
    let mut flat = Vec::new();
    for c in children {
        match c {
            Plan::IndependentUnion(inner) => flat.extend(inner),
            Plan::Constant(p) if p == 0.0 => {}
            other => flat.push(other),
        }
    }
    if let Some(first) = flat.first() {
        let cols = first.column_set();
        if flat.iter().any(|c| c.column_set() != cols) {
            return Err("union of sub-queries with different bound variables".into());
        }
    }
    Ok(match flat.len() {
        0 => Plan::Constant(0.0),
        1 => flat.pop().expect("one child"),
        _ => Plan::IndependentUnion(flat),
    })
}

fn check_relations(q: &Ucq, schema: &Schema) -> Result<(), CompileError> {
    for l in q.disjuncts.iter().flat_map(|c| &c.literals) {
        let info = schema
            .get(&l.atom.predicate)
            .ok_or_else(|| CompileError::UnknownRelation(l.atom.predicate.clone()))?;
        if info.arity != l.atom.arity() {
            return Err(CompileError::ArityMismatch {
                relation: l.atom.predicate.clone(),
                expected: info.arity,
                found: l.atom.arity(),
            });
        }
    }
    Ok(())
}

/// Applies the lifting rules (ground lookup, independent join, independent
/// union, inclusion–exclusion, separator) in that order of preference.
pub fn check_safety(q: &Ucq, schema: &Schema) -> SafetyVerdict {
    if let Err(e) = check_relations(q, schema) {
        return SafetyVerdict::Unsafe {
            witness: q.clone(),
            reason: e.to_string(),
        };
    }
    let lifter = Lifter { schema };
    match lifter.lift(&q.disjuncts, &q.free_set(), 0) {
        Ok(plan) => SafetyVerdict::Safe(plan),
        Err(f) => SafetyVerdict::Unsafe {
            witness: Ucq::new(f.bound.into_iter().collect(), f.witness),
            reason: f.reason,
        },
    }
}

/// Compiles a UCQ into an extensional plan keyed by its free variables.
pub fn compile(q: &Ucq, schema: &Schema) -> Result<Plan, CompileError> {
    check_relations(q, schema)?;
    match check_safety(q, schema) {
        SafetyVerdict::Safe(plan) => Ok(plan),
        SafetyVerdict::Unsafe { witness, reason } => Err(CompileError::Unsupported { witness, reason }),
    }
}

/// Merges atoms of the same choice relation within each disjunct: two
/// distinct tuples of one choice never hold together. Disjuncts requiring
/// two different constant tuples are dropped.
pub fn rewrite_choices(q: &Ucq, schema: &Schema) -> Ucq {
    let lifter = Lifter { schema };
    let bound = q.free_set();
    let disjuncts = q
        .disjuncts
        .iter()
        .filter_map(|cq| {
            let mut c = lifter.unify_choices(cq, &bound)?;
            c.canonicalize();
            Some(c)
        })
        .collect();
    Ucq::new(q.free.clone(), disjuncts)
}
