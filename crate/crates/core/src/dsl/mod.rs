//! The restricted CP-Logic dialect: deterministic rules, independent
//! probabilistic facts and probabilistic choices with body `true`.

mod ast;
mod formula;
mod parser;
mod validate;

pub use ast::{
    Atom, DeterministicRule, Formula, Literal, Location, ProbTuple, ProbabilisticChoiceBlock,
    ProbabilisticFactBlock, Program, Query, QueryKind, Term,
};
pub use formula::Conjunct;
pub use parser::{parse_formula, parse_program, parse_query, parse_term_formula, ParseError};
pub use validate::{validate_program, ValidatedProgram, ValidationError, CHOICE_SUM_EPSILON};
