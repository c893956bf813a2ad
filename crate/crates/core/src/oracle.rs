//! Exact query probabilities by enumerating every possible world. Only
//! usable on tiny databases; it is the reference for every other engine.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rustc_hash::FxHashSet;
use thiserror::Error;

use crate::dsl::{Literal, Query, Term, ValidatedProgram};
use crate::lifted::Ucq;
use crate::probdb::{ProbDatabase, Semantics, Sym};
use crate::ra::{conditional, neumaier_sum, ConditionalError, ProbTable};

/// Largest number of worlds the oracle will enumerate.
pub const WORLD_CAP: u64 = 1 << 20;
/// Residual choice mass below this does not create a "nothing chosen" world.
const RESIDUAL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("{worlds} possible worlds exceed the enumeration cap of {cap}")]
    TooLarge { worlds: f64, cap: u64 },
    #[error("variable `{variable}` of `{literal}` is not bound by a positive atom")]
    UnsafeLiteral { variable: String, literal: String },
    #[error(transparent)]
    Condition(#[from] ConditionalError),
}

/// The facts holding in one possible world, per relation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct World {
    relations: BTreeMap<String, FxHashSet<Vec<Sym>>>,
}

impl World {
    pub fn contains(&self, relation: &str, tuple: &[Sym]) -> bool {
        self.relations.get(relation).is_some_and(|r| r.contains(tuple))
    }

    pub fn tuples<'a>(&'a self, relation: &str) -> impl Iterator<Item = &'a [Sym]> + 'a {
        self.relations
            .get(relation)
            .into_iter()
            .flat_map(|r| r.iter().map(Vec::as_slice))
    }

    pub fn len(&self) -> usize {
        self.relations.values().map(|r| r.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn insert(&mut self, relation: &str, tuple: Vec<Sym>) {
        self.relations.entry(relation.to_string()).or_default().insert(tuple);
    }
}

/// One branching point: an uncertain independent tuple (two options) or a
/// choice group (one option per tuple, plus "none" when mass is missing).
struct Branch {
    relation: String,
    options: Vec<(Option<Vec<Sym>>, f64)>,
}

/// Iterator over `(world, weight)` pairs.
pub struct Worlds {
    base: World,
    branches: Vec<Branch>,
    counter: Vec<usize>,
    done: bool,
}

impl Iterator for Worlds {
    type Item = (World, f64);

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut world = self.base.clone();
        let mut weight = 1.0;
        for (b, &i) in self.branches.iter().zip(&self.counter) {
            let (tuple, p) = &b.options[i];
            weight *= p;
            if let Some(t) = tuple {
                world.insert(&b.relation, t.clone());
            }
        }
        // advance the mixed-radix counter
        self.done = true;
        for (c, b) in self.counter.iter_mut().zip(&self.branches) {
            *c += 1;
            if *c < b.options.len() {
                self.done = false;
                break;
            }
            *c = 0;
        }
        Some((world, weight))
    }
}

/// Enumerates the possible worlds of `db`.
pub fn enumerate_worlds(db: &ProbDatabase) -> Result<Worlds, OracleError> {
    let mut base = World::default();
    let mut branches = Vec::new();
    for rel in db.relations() {
        base.relations.entry(rel.name().to_string()).or_default();
        match rel.semantics() {
            Semantics::Independent => {
                for (tuple, p) in rel.iter() {
                    if p >= 1.0 {
                        base.insert(rel.name(), tuple.to_vec());
                    } else if p > 0.0 {
                        branches.push(Branch {
                            relation: rel.name().to_string(),
                            options: vec![(Some(tuple.to_vec()), p), (None, 1.0 - p)],
                        });
                    }
                }
            }
            Semantics::Choice => {
                let mut options: Vec<(Option<Vec<Sym>>, f64)> = rel
                    .iter()
                    .filter(|(_, p)| *p > 0.0)
                    .map(|(t, p)| (Some(t.to_vec()), p))
                    .collect();
                let residual = 1.0 - neumaier_sum(options.iter().map(|(_, p)| *p));
                if residual > RESIDUAL_EPS || options.is_empty() {
                    options.push((None, residual.max(0.0)));
                }
                if options.len() > 1 {
                    branches.push(Branch {
                        relation: rel.name().to_string(),
                        options,
                    });
                } else if let Some((Some(t), _)) = options.pop() {
                    base.insert(rel.name(), t);
                }
            }
        }
    }
    let count: f64 = branches.iter().map(|b| b.options.len() as f64).product();
    if count > WORLD_CAP as f64 {
        return Err(OracleError::TooLarge {
            worlds: count,
            cap: WORLD_CAP,
        });
    }
    let counter = vec![0; branches.len()];
    Ok(Worlds {
        base,
        branches,
        counter,
        done: false,
    })
}

type Binding = HashMap<String, Sym>;

/// Enumerates the extensions of `binding` satisfying every literal.
/// Positive literals are matched first; negated literals must be ground by
/// then.
fn satisfy(
    literals: &[&Literal],
    world: &World,
    db: &ProbDatabase,
    binding: &mut Binding,
    out: &mut dyn FnMut(&Binding),
) -> Result<(), OracleError> {
    let Some((first, rest)) = literals.split_first() else {
        out(binding);
        return Ok(());
    };
    let resolve = |t: &Term, b: &Binding| -> Option<Option<Sym>> {
        // Some(Some(sym)): known value; Some(None): unknown constant; None: unbound
        match t {
            Term::Const(c) => Some(db.interner().get(c)),
            Term::Var(v) => b.get(v).map(|s| Some(*s)),
        }
    };
    if first.negated {
        let mut key = Vec::with_capacity(first.atom.arity());
        let mut unknown = false;
        for t in &first.atom.args {
            match resolve(t, binding) {
                Some(Some(s)) => key.push(s),
                Some(None) => unknown = true,
                None => {
                    return Err(OracleError::UnsafeLiteral {
                        variable: t.to_string(),
                        literal: first.to_string(),
                    })
                }
            }
        }
        if unknown || !world.contains(&first.atom.predicate, &key) {
            satisfy(rest, world, db, binding, out)?;
        }
        return Ok(());
    }
    for tuple in world.tuples(&first.atom.predicate) {
        let mut added = Vec::new();
        let mut ok = true;
        for (t, s) in first.atom.args.iter().zip(tuple) {
            match resolve(t, binding) {
                Some(Some(v)) => ok = v == *s,
                Some(None) => ok = false,
                None => {
                    let v = t.as_var().expect("unbound term is a variable").to_string();
                    binding.insert(v.clone(), *s);
                    added.push(v);
                }
            }
            if !ok {
                break;
            }
        }
        if ok {
            satisfy(rest, world, db, binding, out)?;
        }
        for v in added {
            binding.remove(&v);
        }
    }
    Ok(())
}

fn ordered(literals: &[Literal]) -> Vec<&Literal> {
    let mut v: Vec<&Literal> = literals.iter().filter(|l| !l.negated).collect();
    v.extend(literals.iter().filter(|l| l.negated));
    v
}

/// Accumulates world weights per binding of `free` (sorted) for which one
/// of the conjunctions holds.
struct Accumulator {
    free: Vec<String>,
    weights: BTreeMap<Vec<Sym>, Vec<f64>>,
}

impl Accumulator {
    fn new(free: &[String]) -> Self {
        let mut free = free.to_vec();
        free.sort();
        free.dedup();
        Accumulator {
            free,
            weights: BTreeMap::new(),
        }
    }

    fn add_world(
        &mut self,
        conjunctions: &[Vec<Literal>],
        world: &World,
        db: &ProbDatabase,
        weight: f64,
    ) -> Result<(), OracleError> {
        let mut keys: BTreeSet<Vec<Sym>> = BTreeSet::new();
        for conj in conjunctions {
            let lits = ordered(conj);
            let free = &self.free;
            satisfy(&lits, world, db, &mut Binding::new(), &mut |b| {
                if let Some(key) = free.iter().map(|v| b.get(v).copied()).collect::<Option<Vec<_>>>() {
                    keys.insert(key);
                }
            })?;
        }
        for k in keys {
            self.weights.entry(k).or_default().push(weight);
        }
        Ok(())
    }

    fn finish(self, db: &ProbDatabase) -> ProbTable {
        let rows = self
            .weights
            .into_iter()
            .map(|(k, ws)| {
                (
                    k.iter().map(|s| db.interner().resolve(*s).to_string()).collect(),
                    neumaier_sum(ws),
                )
            })
            .collect();
        ProbTable::new(self.free, rows)
    }
}

/// Probability of a UCQ over extensional relations, keyed by its free
/// variables (sorted by name).
pub fn oracle_prob(q: &Ucq, db: &ProbDatabase) -> Result<ProbTable, OracleError> {
    let conjunctions: Vec<Vec<Literal>> = q.disjuncts.iter().map(|c| c.literals.clone()).collect();
    let mut acc = Accumulator::new(&q.free);
    for (world, weight) in enumerate_worlds(db)? {
        acc.add_world(&conjunctions, &world, db, weight)?;
    }
    Ok(acc.finish(db))
}

/// Evaluates the rules of `program` inside one world, adding the derived
/// intensional facts.
fn derive(program: &ValidatedProgram, db: &ProbDatabase, world: &mut World) -> Result<(), OracleError> {
    for pred in program.evaluation_order() {
        let mut derived = Vec::new();
        for rule in program.rules_for(pred) {
            let lits = ordered(&rule.body);
            satisfy(&lits, world, db, &mut Binding::new(), &mut |b| {
                let tuple: Option<Vec<Sym>> = rule
                    .head
                    .args
                    .iter()
                    .map(|t| match t {
                        Term::Var(v) => b.get(v).copied(),
                        Term::Const(c) => db.interner().get(c),
                    })
                    .collect();
                if let Some(t) = tuple {
                    derived.push(t);
                }
            })?;
        }
        world.relations.entry(pred.clone()).or_default();
        for t in derived {
            world.insert(pred, t);
        }
    }
    Ok(())
}

/// Answers several queries over a program with one enumeration of worlds.
/// Each world is completed by Datalog evaluation of the rules; conditional
/// queries divide the joint probability by that of the condition.
pub fn oracle_query(
    program: &ValidatedProgram,
    db: &ProbDatabase,
    queries: &[Query],
) -> Result<Vec<ProbTable>, OracleError> {
    struct Prepared {
        joint: Vec<Vec<Literal>>,
        joint_acc: Accumulator,
        condition: Option<(Vec<Vec<Literal>>, Accumulator)>,
    }
    let mut prepared: Vec<Prepared> = queries
        .iter()
        .map(|q| {
            let free = q.free_variables();
            let target = Literal::positive(q.target.clone());
            let cond_dnf: Vec<Vec<Literal>> = match &q.condition {
                None => vec![Vec::new()],
                Some(c) => c
                    .to_dnf()
                    .into_iter()
                    .map(|conj| {
                        conj.into_iter()
                            .map(|(atom, negated)| Literal { atom, negated })
                            .collect()
                    })
                    .collect(),
            };
            let joint = cond_dnf
                .iter()
                .map(|c| {
                    let mut v = vec![target.clone()];
                    v.extend(c.iter().cloned());
                    v
                })
                .collect();
            let condition = q.condition.as_ref().map(|c| {
                let vars: BTreeSet<&str> = c.leaves().into_iter().flat_map(|a| a.variables()).collect();
                let cond_free: Vec<String> = free.iter().filter(|v| vars.contains(v.as_str())).cloned().collect();
                (cond_dnf.clone(), Accumulator::new(&cond_free))
            });
            Prepared {
                joint,
                joint_acc: Accumulator::new(&free),
                condition,
            }
        })
        .collect();
    for (mut world, weight) in enumerate_worlds(db)? {
        derive(program, db, &mut world)?;
        for p in &mut prepared {
            p.joint_acc.add_world(&p.joint, &world, db, weight)?;
            if let Some((conj, acc)) = &mut p.condition {
                acc.add_world(conj, &world, db, weight)?;
            }
        }
    }
    prepared
        .into_iter()
        .map(|p| {
            let joint = p.joint_acc.finish(db);
            match p.condition {
                None => Ok(joint),
                Some((_, acc)) => Ok(conditional(&joint, &acc.finish(db))?),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_program, parse_query, validate_program};
    use crate::lifted::tests_support::ucq;
    use crate::probdb::ProbRelation;

    fn load(src: &str) -> (ValidatedProgram, ProbDatabase) {
        let p = validate_program(parse_program(src).unwrap()).unwrap();
        let db = ProbDatabase::from_program(&p).unwrap();
        (p, db)
    }

    #[test]
    fn single_fact_has_two_worlds() {
        let (_, db) = load("0.3::R(a).");
        let w: Vec<_> = enumerate_worlds(&db).unwrap().collect();
        assert_eq!(w.len(), 2);
        let mut weights: Vec<f64> = w.iter().map(|(_, p)| *p).collect();
        weights.sort_by(f64::total_cmp);
        assert!((weights[0] - 0.3).abs() < 1e-15 && (weights[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn choice_group_is_exclusive() {
        let (_, db) = load("0.5::C(a); 0.5::C(b).");
        let w: Vec<_> = enumerate_worlds(&db).unwrap().collect();
        assert_eq!(w.len(), 2);
        assert!(w.iter().all(|(world, p)| world.len() == 1 && (*p - 0.5).abs() < 1e-15));
        let (_, db) = load("0.2::C(a); 0.5::C(b).");
        let w: Vec<_> = enumerate_worlds(&db).unwrap().collect();
        assert_eq!(w.len(), 3);
        let total: f64 = w.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fig1_two_studies() {
        let (p, db) = load(
            "0.5::SelectedStudy(s1); 0.5::SelectedStudy(s2).
             VoxelReported(v1, s1).
             Activation(v) :- SelectedStudy(s), VoxelReported(v, s).",
        );
        assert_eq!(enumerate_worlds(&db).unwrap().count(), 2);
        let t = oracle_query(&p, &db, &[parse_query("Activation(v)").unwrap()]).unwrap();
        assert!((t[0].get(&["v1"]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn trivial_queries() {
        let (_, db) = load("0.5::SelectedStudy(s1); 0.5::SelectedStudy(s2).");
        let top = Ucq::new(Vec::new(), vec![Default::default()]);
        assert_eq!(oracle_prob(&top, &db).unwrap().scalar_value(), Some(1.0));
        let q = ucq(&[], "SelectedStudy(\"s1\") & SelectedStudy(\"s2\")");
        assert_eq!(oracle_prob(&q, &db).unwrap().scalar_value(), Some(0.0));
    }

    #[test]
    fn single_term_conditional_matches_hand_computation() {
        // four studies; insula present (hard) in s1, s2, s3; v1 reported in s1, s3, s4
        let (p, db) = load(
            "0.25::SelectedStudy(s1); 0.25::SelectedStudy(s2); 0.25::SelectedStudy(s3); 0.25::SelectedStudy(s4).
             TermInStudy(insula, s1). TermInStudy(insula, s2). TermInStudy(insula, s3).
             VoxelReported(v1, s1). VoxelReported(v1, s3). VoxelReported(v1, s4).
             Activation(v) :- SelectedStudy(s), VoxelReported(v, s).
             TermAssociation(t) :- SelectedStudy(s), TermInStudy(t, s).",
        );
        let q = parse_query("Activation(v) | TermAssociation(insula)").unwrap();
        let t = oracle_query(&p, &db, &[q]).unwrap();
        // Σ_i Y_i 1[X_i] / Σ_i 1[X_i] = 2/3
        assert!((t[0].get(&["v1"]) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cap_is_enforced() {
        let mut db = ProbDatabase::new();
        let tuples = (0..21).map(|i| (vec![db.intern(&format!("t{i}"))], 0.5)).collect();
        db.insert(ProbRelation::new("R", 1, Semantics::Independent, tuples).unwrap()).unwrap();
        assert!(matches!(enumerate_worlds(&db), Err(OracleError::TooLarge { .. })));
    }

    #[test]
    fn reordering_does_not_change_result() {
        let (_, a) = load("0.3::R(a). 0.6::R(b). 0.5::S(a, b).");
        let (_, b) = load("0.5::S(a, b). 0.6::R(b). 0.3::R(a).");
        let q = ucq(&[], "R(x) & S(x, y) | R(y)");
        let pa = oracle_prob(&q, &a).unwrap().scalar_value().unwrap();
        let pb = oracle_prob(&q, &b).unwrap().scalar_value().unwrap();
        assert!((pa - pb).abs() < 1e-15);
    }
}
