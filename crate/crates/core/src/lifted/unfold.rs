use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use super::ucq::{substitute_literal, Cq, Ucq};
use crate::dsl::{Atom, Formula, Literal, Query, Term, ValidatedProgram};
use crate::probdb::{Schema, Semantics};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("predicate `{predicate}` has arity {expected}, used with {found} arguments")]
    ArityMismatch {
        predicate: String,
        expected: usize,
        found: usize,
    },
    #[error("negation is only supported on independent probabilistic facts, not on `{0}`")]
    UnsupportedNegation(String),
    #[error("variable `{variable}` of negated atom `{literal}` does not occur in a positive atom")]
    UnboundNegation { variable: String, literal: String },
}

/// A query reduced to UCQs over extensional relations: the joint event
/// `target ∧ condition` and, for conditional queries, the condition alone.
#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldedQuery {
    pub joint: Ucq,
    pub condition: Option<Ucq>,
}

struct Unfolder<'a> {
    program: &'a ValidatedProgram,
    schema: &'a Schema,
    fresh: usize,
}

impl<'a> Unfolder<'a> {
    fn arity(&self, predicate: &str) -> Option<usize> {
        self.program
            .arity(predicate)
            .or_else(|| self.schema.get(predicate).map(|r| r.arity))
    }

    fn check_atom(&self, atom: &Atom, negated: bool) -> Result<(), QueryError> {
        let expected = self
            .arity(&atom.predicate)
            .ok_or_else(|| QueryError::UnknownPredicate(atom.predicate.clone()))?;
        if expected != atom.arity() {
            return Err(QueryError::ArityMismatch {
                predicate: atom.predicate.clone(),
                expected,
                found: atom.arity(),
            });
        }
        if negated {
            let is_choice = self.program.is_choice_relation(&atom.predicate)
                || self
                    .schema
                    .get(&atom.predicate)
                    .is_some_and(|r| r.semantics == Semantics::Choice);
            if self.program.is_intensional(&atom.predicate) || is_choice {
                return Err(QueryError::UnsupportedNegation(atom.predicate.clone()));
            }
        }
        Ok(())
    }

    /// Replaces intensional atoms by rule bodies until only extensional
    /// literals remain; one conjunction per combination of rules.
    fn expand(&mut self, literals: Vec<Literal>, out: &mut Vec<Cq>) {
        let Some(i) = literals
            .iter()
            .position(|l| !l.negated && self.program.is_intensional(&l.atom.predicate))
        else {
            out.push(Cq::new(literals));
            return;
        };
        let atom = literals[i].atom.clone();
        let rules: Vec<_> = self.program.rules_for(&atom.predicate).cloned().collect();
        for rule in rules {
            self.fresh += 1;
            let n = self.fresh;
            let mut subst: HashMap<String, Term> = HashMap::new();
            for (h, arg) in rule.head.args.iter().zip(&atom.args) {
                if let Term::Var(v) = h {
                    subst.insert(v.clone(), arg.clone());
                }
            }
            for l in &rule.body {
                for v in l.atom.variables() {
                    subst
                        .entry(v.to_string())
                        .or_insert_with(|| Term::Var(format!("{v}'{n}")));
                }
            }
            let mut next: Vec<Literal> = literals[..i].to_vec();
            next.extend(rule.body.iter().map(|l| substitute_literal(l, &subst)));
            next.extend_from_slice(&literals[i + 1..]);
            self.expand(next, out);
        }
    }

    fn unfold_formula(&mut self, formula: &Formula, free: &[String]) -> Result<Ucq, QueryError> {
        let mut disjuncts = Vec::new();
        for conj in formula.to_dnf() {
            for (atom, negated) in &conj {
                self.check_atom(atom, *negated)?;
            }
            let literals = conj
                .into_iter()
                .map(|(atom, negated)| Literal { atom, negated })
                .collect();
            self.expand(literals, &mut disjuncts);
        }
        for cq in &mut disjuncts {
            cq.canonicalize();
            check_negation_safety(cq)?;
        }
        disjuncts.dedup();
        Ok(Ucq::new(free.to_vec(), disjuncts))
    }
}

fn check_negation_safety(cq: &Cq) -> Result<(), QueryError> {
    let positive: BTreeSet<&str> = cq
        .literals
        .iter()
        .filter(|l| !l.negated)
        .flat_map(|l| l.atom.variables())
        .collect();
    for l in cq.literals.iter().filter(|l| l.negated) {
        if let Some(v) = l.atom.variables().find(|v| !positive.contains(v)) {
            return Err(QueryError::UnboundNegation {
                variable: v.to_string(),
                literal: l.to_string(),
            });
        }
    }
    Ok(())
}

/// Unfolds a Boolean formula (free variables listed in `free`) into a UCQ
/// over extensional relations.
pub fn unfold(
    formula: &Formula,
    free: &[String],
    program: &ValidatedProgram,
    schema: &Schema,
) -> Result<Ucq, QueryError> {
    Unfolder {
        program,
        schema,
        fresh: 0,
    }
    .unfold_formula(formula, free)
}

/// Unfolds a SUCC or conditional query into its joint and condition UCQs.
/// Condition variables shared with the target are free in both.
pub fn unfold_query(
    query: &Query,
    program: &ValidatedProgram,
    schema: &Schema,
) -> Result<UnfoldedQuery, QueryError> {
    let mut unfolder = Unfolder {
        program,
        schema,
        fresh: 0,
    };
    let free = query.free_variables();
    let target = Formula::Leaf(query.target.clone());
    match &query.condition {
        None => Ok(UnfoldedQuery {
            joint: unfolder.unfold_formula(&target, &free)?,
            condition: None,
        }),
        Some(cond) => {
            let joint_formula = Formula::And(vec![target, cond.clone()]);
            let joint = unfolder.unfold_formula(&joint_formula, &free)?;
            let cond_vars: BTreeSet<&str> =
                cond.leaves().into_iter().flat_map(|a| a.variables()).collect();
            let cond_free: Vec<String> = free
                .iter()
                .filter(|v| cond_vars.contains(v.as_str()))
                .cloned()
                .collect();
            let condition = unfolder.unfold_formula(cond, &cond_free)?;
            Ok(UnfoldedQuery {
                joint,
                condition: Some(condition),
            })
        }
    }
}
