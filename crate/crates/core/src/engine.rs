//! Query answering through one of three interchangeable engines.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::cbma::{self, CbmaDataset, CbmaError, TermQuery, ThresholdConfig};
use crate::dsl::{Query, ValidatedProgram};
use crate::lifted::{compile, unfold_query, CompileError, Plan, QueryError};
use crate::oracle::{oracle_query, OracleError};
use crate::probdb::{ProbDatabase, Schema};
use crate::ra::{conditional, evaluate, ConditionalError, EvalError, ProbTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Engine {
    /// Closed-form weighted estimators (CBMA term queries only).
    #[default]
    Estimator,
    /// Safety check, compilation to an extensional plan and evaluation.
    Lifted,
    /// Enumeration of possible worlds (tiny inputs only).
    Oracle,
}

impl FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "estimator" => Ok(Engine::Estimator),
            "lifted" => Ok(Engine::Lifted),
            "oracle" => Ok(Engine::Oracle),
            other => Err(format!("unknown engine `{other}` (expected estimator, lifted or oracle)")),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Estimator => "estimator",
            Engine::Lifted => "lifted",
            Engine::Oracle => "oracle",
        })
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Cbma(#[from] CbmaError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Condition(#[from] ConditionalError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("the estimator engine only answers CBMA term queries; use --engine lifted or oracle")]
    EstimatorNeedsDataset,
}

impl EngineError {
    /// Unsafe queries and oversized enumerations are verdicts about the
    /// input rather than mistakes in it.
    pub fn is_verdict(&self) -> bool {
        matches!(
            self,
            EngineError::Compile(CompileError::Unsupported { .. }) | EngineError::Oracle(OracleError::TooLarge { .. })
        )
    }
}

/// Plans for the joint event and, for conditional queries, the condition.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledQuery {
    pub joint: Plan,
    pub condition: Option<Plan>,
}

impl fmt::Display for CompiledQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.condition {
            None => write!(f, "{}", self.joint),
            Some(c) => write!(f, "numerator:\n{}denominator:\n{c}", self.joint),
        }
    }
}

pub fn compile_query(program: &ValidatedProgram, schema: &Schema, query: &Query) -> Result<CompiledQuery, EngineError> {
    let unfolded = unfold_query(query, program, schema)?;
    let joint = compile(&unfolded.joint, schema)?;
    let condition = unfolded.condition.map(|c| compile(&c, schema)).transpose()?;
    Ok(CompiledQuery { joint, condition })
}

/// Evaluates a query with the lifted engine.
pub fn lifted_query(program: &ValidatedProgram, db: &ProbDatabase, query: &Query) -> Result<ProbTable, EngineError> {
    let plans = compile_query(program, &db.schema(), query)?;
    let joint = evaluate(&plans.joint, db)?;
    match plans.condition {
        None => Ok(joint),
        Some(c) => Ok(conditional(&joint, &evaluate(&c, db)?)?),
    }
}

/// Answers a query over an explicit program and database.
pub fn program_query(
    program: &ValidatedProgram,
    db: &ProbDatabase,
    query: &Query,
    engine: Engine,
) -> Result<ProbTable, EngineError> {
    match engine {
        Engine::Estimator => Err(EngineError::EstimatorNeedsDataset),
        Engine::Lifted => lifted_query(program, db, query),
        Engine::Oracle => Ok(oracle_query(program, db, std::slice::from_ref(query))?.remove(0)),
    }
}

/// Answers a CBMA term query on a dataset.
pub fn term_query(
    ds: &CbmaDataset,
    cfg: &ThresholdConfig,
    query: &TermQuery,
    engine: Engine,
) -> Result<ProbTable, EngineError> {
    let table = match engine {
        Engine::Estimator => cbma::estimate_formula(ds, cfg, &query.condition)?,
        _ => {
            for t in query.condition.leaves() {
                ds.term_index(t).ok_or_else(|| CbmaError::UnknownTerm(t.clone()))?;
            }
            let (program, db) = cbma::encode_program(ds, cfg)?;
            program_query(&program, &db, &query.to_query(), engine)?
        }
    };
    Ok(rename_column(table, &query.variable))
}

/// Plans used by the lifted engine for a CBMA term query.
pub fn explain_term_query(
    ds: &CbmaDataset,
    cfg: &ThresholdConfig,
    query: &TermQuery,
) -> Result<CompiledQuery, EngineError> {
    let (program, db) = cbma::encode_program(ds, cfg)?;
    compile_query(&program, &db.schema(), &query.to_query())
}

fn rename_column(table: ProbTable, variable: &str) -> ProbTable {
    if table.columns().len() == 1 && table.columns()[0] != variable {
        ProbTable::new(vec![variable.to_string()], table.rows().to_vec())
    } else {
        table
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cbma::parse_term_query;
    use crate::dsl::{parse_program, parse_query, validate_program};

    fn six_studies() -> CbmaDataset {
        CbmaDataset::from_records(
            &[
                ("s1", "a", 0.3),
                ("s1", "b", 0.12),
                ("s2", "a", 0.05),
                ("s2", "b", 0.4),
                ("s3", "a", 0.2),
                ("s4", "b", 0.09),
                ("s4", "a", 0.11),
                ("s5", "a", 0.5),
                ("s5", "b", 0.5),
                ("s6", "b", 0.2),
            ],
            &[
                ("s1", "v1"),
                ("s2", "v1"),
                ("s3", "v2"),
                ("s4", "v1"),
                ("s5", "v2"),
                ("s5", "v3"),
                ("s6", "v3"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn engines_agree_on_fixture() {
        let ds = six_studies();
        for cfg in [ThresholdConfig::hard(0.1).unwrap(), ThresholdConfig::soft(30.0, 0.1).unwrap()] {
            for q in ["Activation(v) | a & b", "Activation(v) | a | b", "Activation(v) | a & !b", "Activation(v)"] {
                let q = parse_term_query(q).unwrap();
                let est = term_query(&ds, &cfg, &q, Engine::Estimator).unwrap();
                let lifted = term_query(&ds, &cfg, &q, Engine::Lifted).unwrap();
                let oracle = term_query(&ds, &cfg, &q, Engine::Oracle).unwrap();
                assert!(est.max_abs_diff(&lifted) < 1e-9, "{q} {cfg}\n{est:?}\n{lifted:?}");
                assert!(est.max_abs_diff(&oracle) < 1e-9, "{q} {cfg}\n{est:?}\n{oracle:?}");
            }
        }
    }

    #[test]
    fn explain_two_term_conjunction() {
        let ds = six_studies();
        let plans = explain_term_query(&ds, &ThresholdConfig::default(), &TermQuery::conjunction(&["a", "b"])).unwrap();
        assert_eq!(plans.joint.count(&|p| matches!(p, Plan::ExclusiveSum { .. })), 1);
        assert!(plans.to_string().contains("ExclusiveSum [s"), "{plans}");
    }

    #[test]
    fn unsafe_query_is_a_verdict() {
        let program = validate_program(
            parse_program("0.5::R(a). 0.5::S(a, b). 0.5::T(b). Q() :- R(x), S(x, y). Q() :- S(x, y), T(y).").unwrap(),
        )
        .unwrap();
        let db = ProbDatabase::from_program(&program).unwrap();
        let q = parse_query("Q()").unwrap();
        let err = program_query(&program, &db, &q, Engine::Lifted).unwrap_err();
        assert!(err.is_verdict(), "{err}");
        let p = program_query(&program, &db, &q, Engine::Oracle).unwrap();
        // 1 - P[not (R&S or S&T)] = P[S] * (1 - 0.25)
        assert!((p.scalar_value().unwrap() - 0.375).abs() < 1e-12);
    }

    #[test]
    fn engine_names() {
        assert_eq!("lifted".parse::<Engine>().unwrap(), Engine::Lifted);
        assert!("fast".parse::<Engine>().is_err());
        assert_eq!(Engine::Oracle.to_string(), "oracle");
    }
}
