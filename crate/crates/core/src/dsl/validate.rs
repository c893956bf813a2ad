use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::ast::*;

/// Tolerance on the probability mass of a choice block.
pub const CHOICE_SUM_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("recursive rules are not allowed: cycle through {}", cycle.join(" -> "))]
    Recursion { cycle: Vec<String> },
    #[error("{location}: variable `{variable}` in the head of `{rule}` does not occur in its body")]
    UnsafeVariable {
        variable: String,
        rule: String,
        location: Location,
    },
    #[error("{location}: choice over `{relation}` has total probability {sum} > 1")]
    ChoiceSum {
        relation: String,
        sum: f64,
        location: Location,
    },
    #[error("{location}: negation is not allowed in rule bodies (`{rule}`)")]
    NegationInRule { rule: String, location: Location },
    #[error("{location}: rule heads must list distinct variables (`{rule}`)")]
    NonNormalHead { rule: String, location: Location },
    #[error("predicate `{predicate}` is {reason}")]
    ConflictingDefinition { predicate: String, reason: String },
}

/// A program that passed [`validate_program`]: non-recursive, safe, with
/// well-formed probabilistic blocks.
#[derive(Debug, Clone)]
pub struct ValidatedProgram {
    program: Program,
    arities: BTreeMap<String, usize>,
    rules_by_head: BTreeMap<String, Vec<usize>>,
    order: Vec<String>,
}

impl ValidatedProgram {
    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn arity(&self, predicate: &str) -> Option<usize> {
        self.arities.get(predicate).copied()
    }

    pub fn predicates(&self) -> impl Iterator<Item = (&str, usize)> {
        self.arities.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn is_intensional(&self, predicate: &str) -> bool {
        self.rules_by_head.contains_key(predicate)
    }

    pub fn rules_for(&self, predicate: &str) -> impl Iterator<Item = &DeterministicRule> {
        self.rules_by_head
            .get(predicate)
            .into_iter()
            .flatten()
            .map(move |&i| &self.program.rules[i])
    }

    /// Intensional predicates, each after every intensional predicate it depends on.
    pub fn evaluation_order(&self) -> &[String] {
        &self.order
    }

    pub fn is_choice_relation(&self, predicate: &str) -> bool {
        self.program.choices.iter().any(|c| c.relation == predicate)
    }
}

/// Checks the syntactic restrictions of the dialect.
pub fn validate_program(program: Program) -> Result<ValidatedProgram, ValidationError> {
    let mut arities = BTreeMap::new();
    let mut note = |atom: &Atom| {
        arities.entry(atom.predicate.clone()).or_insert(atom.arity());
    };
    for r in &program.rules {
        note(&r.head);
        r.body.iter().for_each(|l| note(&l.atom));
    }
    for b in &program.facts {
        if let Some(t) = b.tuples.first() {
            arities.entry(b.relation.clone()).or_insert(t.args.len());
        }
    }
    for b in &program.choices {
        if let Some(t) = b.tuples.first() {
            arities.entry(b.relation.clone()).or_insert(t.args.len());
        }
    }

    let mut rules_by_head: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, rule) in program.rules.iter().enumerate() {
        if rule.body.iter().any(|l| l.negated) {
            return Err(ValidationError::NegationInRule {
                rule: rule.to_string(),
                location: rule.location,
            });
        }
        let mut seen = BTreeSet::new();
        for arg in &rule.head.args {
            match arg {
                Term::Var(v) if seen.insert(v.clone()) => {}
                _ => {
                    return Err(ValidationError::NonNormalHead {
                        rule: rule.to_string(),
                        location: rule.location,
                    })
                }
            }
        }
        let body_vars: BTreeSet<&str> = rule.body.iter().flat_map(|l| l.atom.variables()).collect();
        if let Some(v) = rule.head.variables().find(|v| !body_vars.contains(v)) {
            return Err(ValidationError::UnsafeVariable {
                variable: v.to_string(),
                rule: rule.to_string(),
                location: rule.location,
            });
        }
        rules_by_head
            .entry(rule.head.predicate.clone())
            .or_default()
            .push(i);
    }

    let mut extensional_kind: BTreeMap<&str, &str> = BTreeMap::new();
    for b in &program.facts {
        extensional_kind.insert(&b.relation, "facts");
    }
    for b in &program.choices {
        if let Some(prev) = extensional_kind.insert(&b.relation, "choice") {
            let reason = if prev == "facts" {
                "defined both by independent facts and by a choice".to_string()
            } else {
                "defined by more than one choice".to_string()
            };
            return Err(ValidationError::ConflictingDefinition {
                predicate: b.relation.clone(),
                reason,
            });
        }
        let sum: f64 = b.tuples.iter().map(|t| t.probability).sum();
        if sum > 1.0 + CHOICE_SUM_EPSILON {
            return Err(ValidationError::ChoiceSum {
                relation: b.relation.clone(),
                sum,
                location: b.location,
            });
        }
    }
    for head in rules_by_head.keys() {
        if extensional_kind.contains_key(head.as_str()) {
            return Err(ValidationError::ConflictingDefinition {
                predicate: head.clone(),
                reason: "defined both by rules and by facts".into(),
            });
        }
    }

    let order = topological_order(&program, &rules_by_head)?;
    Ok(ValidatedProgram {
        program,
        arities,
        rules_by_head,
        order,
    })
}

fn topological_order(
    program: &Program,
    rules_by_head: &BTreeMap<String, Vec<usize>>,
) -> Result<Vec<String>, ValidationError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Fresh,
        Active,
        Done,
    }
    let deps = |p: &str| -> Vec<String> {
        let mut d: Vec<String> = rules_by_head[p]
            .iter()
            .flat_map(|&i| program.rules[i].body.iter())
            .map(|l| l.atom.predicate.clone())
            .filter(|q| rules_by_head.contains_key(q))
            .collect();
        d.sort();
        d.dedup();
        d
    };
    let mut marks: BTreeMap<&str, Mark> =
        rules_by_head.keys().map(|k| (k.as_str(), Mark::Fresh)).collect();
    let mut order = Vec::new();
    let mut stack: Vec<String> = Vec::new();

    fn visit<'a>(
        p: &'a str,
        marks: &mut BTreeMap<&'a str, Mark>,
        stack: &mut Vec<String>,
        order: &mut Vec<String>,
        deps: &dyn Fn(&str) -> Vec<String>,
        keys: &'a BTreeMap<String, Vec<usize>>,
    ) -> Result<(), ValidationError> {
        match marks[p] {
            Mark::Done => return Ok(()),
            Mark::Active => {
                let start = stack.iter().position(|s| s == p).unwrap_or(0);
                return Err(ValidationError::Recursion {
                    cycle: stack[start..].to_vec(),
                });
            }
            Mark::Fresh => {}
        }
        marks.insert(p, Mark::Active);
        stack.push(p.to_string());
        for d in deps(p) {
            let key = keys.get_key_value(&d).expect("intensional").0.as_str();
            visit(key, marks, stack, order, deps, keys)?;
        }
        stack.pop();
        marks.insert(p, Mark::Done);
        order.push(p.to_string());
        Ok(())
    }

    for p in rules_by_head.keys() {
        visit(p, &mut marks, &mut stack, &mut order, &deps, rules_by_head)?;
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_program;

    const FIG1: &str = "
        0.25::SelectedStudy(s1); 0.25::SelectedStudy(s2); 0.25::SelectedStudy(s3); 0.25::SelectedStudy(s4).
        0.9::TermInStudy(insula, s1).
        0.4::TermInStudy(speech, s2).
        VoxelReported(v1, s1).
        VoxelReported(v2, s3).
        Activation(v) :- SelectedStudy(s), VoxelReported(v, s).
        TermAssociation(t) :- SelectedStudy(s), TermInStudy(t, s).
    ";

    fn validate(src: &str) -> Result<ValidatedProgram, ValidationError> {
        validate_program(parse_program(src).unwrap())
    }

    #[test]
    fn fig1_program_is_valid() {
        let v = validate(FIG1).unwrap();
        assert!(v.is_intensional("Activation"));
        assert!(!v.is_intensional("TermInStudy"));
        assert!(v.is_choice_relation("SelectedStudy"));
        assert_eq!(v.arity("VoxelReported"), Some(2));
        assert_eq!(v.evaluation_order().len(), 2);
    }

    #[test]
    fn direct_recursion_rejected() {
        let err = validate("A(x) :- A(y), B(x).").unwrap_err();
        assert_eq!(
            err,
            ValidationError::Recursion {
                cycle: vec!["A".into()]
            }
        );
    }

    #[test]
    fn mutual_recursion_names_cycle() {
        let err = validate("A(x) :- B(x).\nB(x) :- C(x), A(x).\nC(x) :- D(x).").unwrap_err();
        match err {
            ValidationError::Recursion { cycle } => assert_eq!(cycle, vec!["A", "B"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unsafe_head_variable() {
        let err = validate("H(x, z) :- B(x).").unwrap_err();
        assert!(matches!(err, ValidationError::UnsafeVariable { ref variable, .. } if variable == "z"));
    }

    #[test]
    fn choice_sum_checked() {
        assert!(matches!(
            validate("0.6::C(a); 0.5::C(b).").unwrap_err(),
            ValidationError::ChoiceSum { .. }
        ));
        // residual mass means "no tuple chosen"
        assert!(validate("0.3::C(a); 0.5::C(b).").is_ok());
        // tolerance
        assert!(validate("0.3333333333::C(a); 0.3333333333::C(b); 0.3333333334::C(c).").is_ok());
    }

    #[test]
    fn negation_in_rule_rejected() {
        assert!(matches!(
            validate("A(x) :- B(x), !C(x).").unwrap_err(),
            ValidationError::NegationInRule { .. }
        ));
    }

    #[test]
    fn conflicting_definitions() {
        assert!(validate("R(a).\nR(x) :- S(x).").is_err());
        assert!(validate("0.5::R(a); 0.5::R(b).\n0.1::R(c).").is_err());
        assert!(validate("H(x, x) :- B(x).").is_err());
    }

    #[test]
    fn acyclic_chain_is_ordered() {
        let v = validate("C(x) :- B(x).\nB(x) :- A(x).\nA(x) :- E(x).").unwrap();
        assert_eq!(v.evaluation_order(), &["A", "B", "C"]);
    }
}
