use std::collections::BTreeSet;
use std::fmt;

use crate::dsl::{Atom, Term};

/// An extensional query plan. Every node evaluates to a probability table
/// keyed by the bound variables listed by [`Plan::columns`].
#[derive(Debug, Clone, PartialEq)]
pub enum Plan {
    /// A fixed probability with no key columns.
    Constant(f64),
    /// Probability of a single tuple, looked up once its variables are bound.
    GroundLookup(Atom),
    /// `1 - p`.
    Complement(Box<Plan>),
    /// Extends every key of the child with `column = value`, where `value`
    /// is a constant or another column of the child.
    Selection {
        column: String,
        value: Term,
        child: Box<Plan>,
    },
    /// Product over independent children, on the natural join of their keys.
    IndependentJoin(Vec<Plan>),
    /// `1 - prod(1 - p)` over independent children with identical columns.
    IndependentUnion(Vec<Plan>),
    /// `1 - prod_x(1 - p)`: independent existential quantification.
    IndependentProject { variable: String, child: Box<Plan> },
    /// `sum_x p`: quantification over mutually exclusive events.
    ExclusiveSum { variable: String, child: Box<Plan> },
    /// Signed sum of children with identical columns.
    InclusionExclusion(Vec<(i32, Plan)>),
}

impl Plan {
    /// Bound variables keying the output, sorted.
    pub fn columns(&self) -> Vec<String> {
        self.column_set().into_iter().collect()
    }

    pub(crate) fn column_set(&self) -> BTreeSet<String> {
        match self {
            Plan::Constant(_) => BTreeSet::new(),
            Plan::GroundLookup(atom) => atom.variables().map(str::to_string).collect(),
            Plan::Complement(child) => child.column_set(),
            Plan::Selection { column, child, .. } => {
                let mut c = child.column_set();
                c.insert(column.clone());
                c
            }
            Plan::IndependentJoin(children) | Plan::IndependentUnion(children) => {
                children.iter().flat_map(Plan::column_set).collect()
            }
            Plan::IndependentProject { variable, child } | Plan::ExclusiveSum { variable, child } => {
                let mut c = child.column_set();
                c.remove(variable);
                c
            }
            Plan::InclusionExclusion(terms) => terms.iter().flat_map(|(_, p)| p.column_set()).collect(),
        }
    }

    /// Number of operator nodes.
    pub fn size(&self) -> usize {
        1 + match self {
            Plan::Constant(_) | Plan::GroundLookup(_) => 0,
            Plan::Complement(c)
            | Plan::Selection { child: c, .. }
            | Plan::IndependentProject { child: c, .. }
            | Plan::ExclusiveSum { child: c, .. } => c.size(),
            Plan::IndependentJoin(cs) | Plan::IndependentUnion(cs) => cs.iter().map(Plan::size).sum(),
            Plan::InclusionExclusion(ts) => ts.iter().map(|(_, p)| p.size()).sum(),
        }
    }

    /// Counts nodes satisfying `pred`.
    pub fn count(&self, pred: &dyn Fn(&Plan) -> bool) -> usize {
        let own = usize::from(pred(self));
        own + match self {
            Plan::Constant(_) | Plan::GroundLookup(_) => 0,
            Plan::Complement(c)
            | Plan::Selection { child: c, .. }
            | Plan::IndependentProject { child: c, .. }
            | Plan::ExclusiveSum { child: c, .. } => c.count(pred),
            Plan::IndependentJoin(cs) | Plan::IndependentUnion(cs) => cs.iter().map(|c| c.count(pred)).sum(),
            Plan::InclusionExclusion(ts) => ts.iter().map(|(_, p)| p.count(pred)).sum(),
        }
    }

    fn write_tree(&self, f: &mut fmt::Formatter<'_>, depth: usize) -> fmt::Result {
        let pad = "  ".repeat(depth);
        match self {
            Plan::Constant(p) => writeln!(f, "{pad}Constant {p}"),
            Plan::GroundLookup(atom) => writeln!(f, "{pad}GroundLookup {atom}"),
            Plan::Complement(child) => {
                writeln!(f, "{pad}Complement")?;
                child.write_tree(f, depth + 1)
            }
            Plan::Selection { column, value, child } => {
                writeln!(f, "{pad}Selection [{column} = {value}]")?;
                child.write_tree(f, depth + 1)
            }
            Plan::IndependentJoin(children) => {
                writeln!(f, "{pad}IndependentJoin")?;
                children.iter().try_for_each(|c| c.write_tree(f, depth + 1))
            }
            Plan::IndependentUnion(children) => {
                writeln!(f, "{pad}IndependentUnion")?;
                children.iter().try_for_each(|c| c.write_tree(f, depth + 1))
            }
            Plan::IndependentProject { variable, child } => {
                writeln!(f, "{pad}IndependentProject [{variable}]")?;
                child.write_tree(f, depth + 1)
            }
            Plan::ExclusiveSum { variable, child } => {
                writeln!(f, "{pad}ExclusiveSum [{variable}]")?;
                child.write_tree(f, depth + 1)
            }
            Plan::InclusionExclusion(terms) => {
                writeln!(f, "{pad}InclusionExclusion")?;
                for (sign, p) in terms {
                    writeln!(f, "{pad}  {}", if *sign > 0 { "+" } else { "-" })?;
                    p.write_tree(f, depth + 2)?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_tree(f, 0)
    }
}
