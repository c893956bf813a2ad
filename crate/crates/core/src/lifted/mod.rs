//! Lifted inference for unions of conjunctive queries: unfolding rules into
//! UCQs, the safety check and compilation into extensional plans.

mod compile;
mod plan;
mod ucq;
mod unfold;

pub use compile::{check_safety, compile, rewrite_choices, CompileError, SafetyVerdict};
pub use plan::Plan;
pub use ucq::{Cq, Ucq};
pub use unfold::{unfold, unfold_query, QueryError, UnfoldedQuery};

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;
    use crate::dsl::{parse_formula, Literal};

    /// Parses a formula over extensional atoms into a UCQ.
    pub(crate) fn ucq(free: &[&str], src: &str) -> Ucq {
        let disjuncts = parse_formula(src)
            .unwrap()
            .to_dnf()
            .into_iter()
            .map(|c| {
                Cq::new(
                    c.into_iter()
                        .map(|(atom, negated)| Literal { atom, negated })
                        .collect(),
                )
            })
            .collect();
        Ucq::new(free.iter().map(|s| s.to_string()).collect(), disjuncts)
    }
}
