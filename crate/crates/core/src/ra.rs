//! Evaluation of extensional plans over a probabilistic database.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io;

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::dsl::{Atom, Term};
use crate::lifted::Plan;
use crate::probdb::{ProbDatabase, ProbRelation, Sym};

/// Defaults smaller than this are treated as zero.
const DEFAULT_EPS: f64 = 1e-12;
/// Smallest usable conditioning probability.
pub const MIN_CONDITION: f64 = 1e-15;

/// Compensated (Neumaier) summation.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = Neumaier::default();
    values.into_iter().for_each(|v| acc.add(v));
    acc.value()
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("relation `{0}` is not in the database")]
    UnknownRelation(String),
    #[error("plan cannot be evaluated: {reason}\n{plan}")]
    Unsupported { reason: String, plan: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConditionalError {
    #[error("conditioning event has probability {value} (no study matches the condition){}", key_suffix(.key))]
    ZeroCondition { key: Vec<String>, value: f64 },
    #[error("denominator columns {denominator:?} are not a subset of numerator columns {numerator:?}")]
    ColumnMismatch {
        numerator: Vec<String>,
        denominator: Vec<String>,
    },
}

fn key_suffix(key: &[String]) -> String {
    if key.is_empty() {
        String::new()
    } else {
        format!(" for key ({})", key.join(", "))
    }
}

/// Probabilities keyed by bindings of the key columns, sorted by key.
/// Keys that are absent have probability 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbTable {
    columns: Vec<String>,
    rows: Vec<(Vec<String>, f64)>,
}

impl ProbTable {
    /// Builds a table, sorting rows and clamping probabilities into [0, 1].
    pub fn new(columns: Vec<String>, mut rows: Vec<(Vec<String>, f64)>) -> Self {
        for (_, p) in &mut rows {
            *p = p.clamp(0.0, 1.0);
        }
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        ProbTable { columns, rows }
    }

    /// A table without key columns.
    pub fn scalar(p: f64) -> Self {
        Self::new(Vec::new(), vec![(Vec::new(), p)])
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[(Vec<String>, f64)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get<S: AsRef<str>>(&self, key: &[S]) -> f64 {
        self.rows
            .binary_search_by(|(k, _)| {
                k.iter()
                    .map(String::as_str)
                    .cmp(key.iter().map(AsRef::as_ref))
            })
            .map_or(0.0, |i| self.rows[i].1)
    }

    /// Value of a table without key columns.
    pub fn scalar_value(&self) -> Option<f64> {
        self.columns.is_empty().then(|| self.get::<&str>(&[]))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for c in &self.columns {
            let _ = write!(out, "{c}\t");
        }
        out.push_str("p\n");
        for (k, p) in &self.rows {
            for v in k {
                let _ = write!(out, "{v}\t");
            }
            let _ = writeln!(out, "{p}");
        }
        out
    }

    pub fn write_tsv(&self, mut w: impl io::Write) -> io::Result<()> {
        w.write_all(self.to_tsv().as_bytes())
    }

    /// Largest absolute difference over the union of keys.
    pub fn max_abs_diff(&self, other: &ProbTable) -> f64 {
        let keys: BTreeSet<&Vec<String>> = self.rows.iter().chain(&other.rows).map(|(k, _)| k).collect();
        keys.into_iter()
            .map(|k| (self.get(k) - other.get(k)).abs())
            .fold(0.0, f64::max)
    }
}

/// `numerator / denominator` per key. A denominator without columns is a
/// scalar; otherwise its columns must be a subset of the numerator's.
pub fn conditional(numerator: &ProbTable, denominator: &ProbTable) -> Result<ProbTable, ConditionalError> {
    if let Some(d) = denominator.scalar_value() {
        if d <= MIN_CONDITION {
            return Err(ConditionalError::ZeroCondition {
                key: Vec::new(),
                value: d,
            });
        }
        let rows = numerator.rows.iter().map(|(k, p)| (k.clone(), p / d)).collect();
        return Ok(ProbTable::new(numerator.columns.clone(), rows));
    }
    let positions: Option<Vec<usize>> = denominator
        .columns
        .iter()
        .map(|c| numerator.columns.iter().position(|n| n == c))
        .collect();
    let positions = positions.ok_or_else(|| ConditionalError::ColumnMismatch {
        numerator: numerator.columns.clone(),
        denominator: denominator.columns.clone(),
    })?;
    let mut rows = Vec::with_capacity(numerator.len());
    for (k, p) in &numerator.rows {
        let sub: Vec<&str> = positions.iter().map(|&i| k[i].as_str()).collect();
        let d = denominator.get(&sub);
        if d <= MIN_CONDITION {
            return Err(ConditionalError::ZeroCondition {
                key: sub.iter().map(|s| s.to_string()).collect(),
                value: d,
            });
        }
        rows.push((k.clone(), p / d));
    }
    Ok(ProbTable::new(numerator.columns.clone(), rows))
}

/// Intermediate result: rows keyed by symbols plus a probability for
/// every absent key.
#[derive(Debug, Clone)]
struct Table {
    cols: Vec<String>,
    rows: FxHashMap<Vec<Sym>, f64>,
    default: f64,
}

impl Table {
    fn constant(p: f64) -> Self {
        Table {
            cols: Vec::new(),
            rows: FxHashMap::default(),
            default: p,
        }
    }

    fn get(&self, key: &[Sym]) -> f64 {
        self.rows.get(key).copied().unwrap_or(self.default)
    }

    /// Folds the single row of a column-less table into its default.
    fn normalize(mut self) -> Self {
        if self.cols.is_empty() {
            if let Some(v) = self.rows.remove(&[][..]) {
                self.default = v;
            }
        }
        self
    }

    fn has_default(&self) -> bool {
        self.default.abs() > DEFAULT_EPS
    }
}

#[derive(Debug, Clone, Copy)]
enum Arg {
    Const(Sym),
    /// slot bound by an earlier input
    Check(usize),
    /// slot bound by an earlier argument of the same atom
    Repeat(usize),
    Assign(usize),
}

enum Input<'a> {
    Leaf {
        rel: &'a ProbRelation,
        args: Vec<Arg>,
        complement: bool,
    },
    Tab {
        table: Table,
        /// slot of every table column
        slots: Vec<usize>,
        /// bound before this input is reached: key columns of `index`
        bound: Vec<usize>,
        index: Option<FxHashMap<Vec<Sym>, Vec<(Vec<Sym>, f64)>>>,
    },
}

/// Evaluates a plan. Keys bind the plan's columns in sorted order.
pub fn evaluate(plan: &Plan, db: &ProbDatabase) -> Result<ProbTable, EvalError> {
    let ev = Evaluator { db, root: plan };
    let table = ev.table(plan)?;
    ev.to_prob_table(table)
}

struct Evaluator<'a> {
    db: &'a ProbDatabase,
    root: &'a Plan,
}

enum Agg {
    Sum,
    NoisyOr,
}

impl<'a> Evaluator<'a> {
    fn unsupported(&self, reason: impl Into<String>) -> EvalError {
        EvalError::Unsupported {
            reason: reason.into(),
            plan: self.root.to_string(),
        }
    }

    fn relation(&self, name: &str) -> Result<&'a ProbRelation, EvalError> {
        self.db
            .relation(name)
            .ok_or_else(|| EvalError::UnknownRelation(name.to_string()))
    }

    fn to_prob_table(&self, t: Table) -> Result<ProbTable, EvalError> {
        let t = t.normalize();
        if t.cols.is_empty() {
            return Ok(ProbTable::scalar(t.default));
        }
        if t.has_default() {
            return Err(self.unsupported("result is nonzero on unbounded keys"));
        }
        let names = self.db.interner();
        let rows = t
            .rows
            .into_iter()
            .map(|(k, p)| (k.iter().map(|s| names.resolve(*s).to_string()).collect(), p))
            .collect();
        Ok(ProbTable::new(t.cols, rows))
    }

    fn table(&self, plan: &Plan) -> Result<Table, EvalError> {
        let t = match plan {
            Plan::Constant(p) => Table::constant(*p),
            Plan::GroundLookup(_) | Plan::IndependentJoin(_) => {
                let cols = plan.columns();
                let mut rows = FxHashMap::default();
                let default = self.join(plan, &cols, &mut |k, p| {
                    rows.insert(k.to_vec(), p);
                })?;
                Table { cols, rows, default }
            }
            Plan::Complement(child) => {
                let t = self.table(child)?;
                Table {
                    cols: t.cols,
                    rows: t.rows.into_iter().map(|(k, p)| (k, 1.0 - p)).collect(),
                    default: 1.0 - t.default,
                }
            }
            Plan::Selection { column, value, child } => self.selection(column, value, child)?,
            Plan::IndependentUnion(children) => {
                let tables = children.iter().map(|c| self.table(c)).collect::<Result<Vec<_>, _>>()?;
                self.combine(tables, &mut |ps| 1.0 - ps.iter().map(|p| 1.0 - p).product::<f64>())?
            }
            Plan::InclusionExclusion(terms) => {
                let tables = terms.iter().map(|(_, c)| self.table(c)).collect::<Result<Vec<_>, _>>()?;
                let signs: Vec<f64> = terms.iter().map(|(s, _)| *s as f64).collect();
                self.combine(tables, &mut |ps| neumaier_sum(ps.iter().zip(&signs).map(|(p, s)| p * s)))?
            }
            Plan::IndependentProject { variable, child } => self.aggregate(variable, child, Agg::NoisyOr)?,
            Plan::ExclusiveSum { variable, child } => self.aggregate(variable, child, Agg::Sum)?,
        };
        Ok(t.normalize())
    }

    fn selection(&self, column: &str, value: &Term, child: &Plan) -> Result<Table, EvalError> {
        let t = self.table(child)?;
        if t.has_default() {
            return Err(self.unsupported("selection over a table with nonzero default"));
        }
        let mut cols = t.cols.clone();
        cols.push(column.to_string());
        cols.sort();
        let target = cols.iter().position(|c| c == column).expect("inserted");
        let source = match value {
            Term::Const(c) => match self.db.interner().get(c) {
                Some(s) => Err(s),
                None => {
                    return Ok(Table {
                        cols,
                        rows: FxHashMap::default(),
                        default: 0.0,
                    })
                }
            },
            Term::Var(v) => Ok(t
                .cols
                .iter()
                .position(|c| c == v)
                .ok_or_else(|| self.unsupported(format!("selection refers to unknown column `{v}`")))?),
        };
        let rows = t
            .rows
            .into_iter()
            .map(|(k, p)| {
                let sym = match source {
                    Ok(i) => k[i],
                    Err(s) => s,
                };
                let mut nk = k;
                nk.insert(target, sym);
                (nk, p)
            })
            .collect();
        Ok(Table { cols, rows, default: 0.0 })
    }

    /// Combines tables with identical columns key by key.
    fn combine(&self, tables: Vec<Table>, f: &mut dyn FnMut(&[f64]) -> f64) -> Result<Table, EvalError> {
        let cols = tables.first().map(|t| t.cols.clone()).unwrap_or_default();
        if tables.iter().any(|t| t.cols != cols) {
            return Err(self.unsupported("combining tables with different columns"));
        }
        let defaults: Vec<f64> = tables.iter().map(|t| t.default).collect();
        let mut keys: BTreeSet<&Vec<Sym>> = BTreeSet::new();
        for t in &tables {
            keys.extend(t.rows.keys());
        }
        let mut buf = vec![0.0; tables.len()];
        let mut rows = FxHashMap::default();
        for k in keys {
            for (b, t) in buf.iter_mut().zip(&tables) {
                *b = t.get(k);
            }
            rows.insert(k.clone(), f(&buf));
        }
        Ok(Table {
            cols,
            rows,
            default: f(&defaults),
        })
    }

    fn aggregate(&self, variable: &str, child: &Plan, agg: Agg) -> Result<Table, EvalError> {
        let child_cols = child.columns();
        let drop = child_cols
            .iter()
            .position(|c| c == variable)
            .ok_or_else(|| self.unsupported(format!("projected variable `{variable}` is not a column")))?;
        let cols: Vec<String> = child_cols.iter().filter(|c| *c != variable).cloned().collect();
        let mut sums: FxHashMap<Vec<Sym>, Neumaier> = FxHashMap::default();
        let mut prods: FxHashMap<Vec<Sym>, f64> = FxHashMap::default();
        let mut key = Vec::with_capacity(cols.len());
        let mut sink = |k: &[Sym], p: f64| {
            key.clear();
            key.extend(k.iter().enumerate().filter(|(i, _)| *i != drop).map(|(_, s)| *s));
            match agg {
                Agg::Sum => match sums.get_mut(&key[..]) {
                    Some(acc) => acc.add(p),
                    None => {
                        let mut acc = Neumaier::default();
                        acc.add(p);
                        sums.insert(key.clone(), acc);
                    }
                },
                Agg::NoisyOr => match prods.get_mut(&key[..]) {
                    Some(q) => *q *= 1.0 - p,
                    None => {
                        prods.insert(key.clone(), 1.0 - p);
                    }
                },
            }
        };
        let default = match child {
            Plan::GroundLookup(_) | Plan::IndependentJoin(_) => self.join(child, &child_cols, &mut sink)?,
            other => {
                let t = self.table(other)?;
                for (k, p) in &t.rows {
                    sink(k, *p);
                }
                t.default
            }
        };
        if default.abs() > DEFAULT_EPS {
            return Err(self.unsupported(format!(
                "quantifying `{variable}` over a table with nonzero default"
            )));
        }
        let rows = match agg {
            Agg::Sum => sums.into_iter().map(|(k, a)| (k, a.value())).collect(),
            Agg::NoisyOr => prods.into_iter().map(|(k, q)| (k, 1.0 - q)).collect(),
        };
        Ok(Table { cols, rows, default: 0.0 })
    }

    fn leaf_input(&self, atom: &Atom, complement: bool, slot_of: &dyn Fn(&str) -> usize) -> Result<Option<Input<'a>>, EvalError> {
        let rel = self.relation(&atom.predicate)?;
        if rel.arity() != atom.arity() {
            return Err(self.unsupported(format!("arity mismatch on `{}`", atom.predicate)));
        }
        let mut args = Vec::with_capacity(atom.arity());
        for t in &atom.args {
            args.push(match t {
                Term::Const(c) => match self.db.interner().get(c) {
                    Some(s) => Arg::Const(s),
                    // an unknown constant matches no tuple
                    None => return Ok(None),
                },
                Term::Var(v) => Arg::Assign(slot_of(v)),
            });
        }
        Ok(Some(Input::Leaf { rel, args, complement }))
    }

    /// Enumerates the rows of a join (or a single lookup) with nonzero
    /// probability, passing complete bindings of `cols` to `sink`. Returns
    /// the probability of keys never passed to the sink.
    fn join(&self, plan: &Plan, cols: &[String], sink: &mut dyn FnMut(&[Sym], f64)) -> Result<f64, EvalError> {
        let children: &[Plan] = match plan {
            Plan::IndependentJoin(cs) => cs,
            other => std::slice::from_ref(other),
        };
        let slot_of = |v: &str| cols.iter().position(|c| c == v).expect("join column");
        let mut inputs: Vec<Input<'a>> = Vec::new();
        let mut dead = false;
        for child in children {
            let (atom, complement) = match child {
                Plan::GroundLookup(a) => (Some(a), false),
                Plan::Complement(inner) => match inner.as_ref() {
                    Plan::GroundLookup(a) => (Some(a), true),
                    _ => (None, false),
                },
                _ => (None, false),
            };
            if let Some(atom) = atom {
                match self.leaf_input(atom, complement, &slot_of)? {
                    Some(input) => inputs.push(input),
                    None if complement => {}
                    None => dead = true,
                }
                continue;
            }
            let table = self.table(child)?;
            let slots = table.cols.iter().map(|c| slot_of(c)).collect();
            inputs.push(Input::Tab {
                table,
                slots,
                bound: Vec::new(),
                index: None,
            });
        }
        let input_default = |i: &Input| match i {
            Input::Leaf { complement, .. } => {
                if *complement {
                    1.0
                } else {
                    0.0
                }
            }
            Input::Tab { table, .. } => table.default,
        };
        let default: f64 = if dead {
            0.0
        } else {
            inputs.iter().map(input_default).product()
        };
        if dead {
            return Ok(0.0);
        }
        if inputs.iter().all(|i| input_default(i).abs() > DEFAULT_EPS) {
            return self.outer_join(inputs, cols, sink).map(|_| default);
        }
        let ordered = self.order_inputs(inputs, cols.len())?;
        let mut slots = vec![Sym(u32::MAX); cols.len()];
        let mut scratch = Vec::new();
        enumerate(&ordered, 0, &mut slots, 1.0, &mut scratch, sink);
        Ok(default)
    }

    /// Greedy ordering: zero-default inputs first, starting from the most
    /// selective and preferring inputs connected to bound columns.
    fn order_inputs(&self, inputs: Vec<Input<'a>>, width: usize) -> Result<Vec<Input<'a>>, EvalError> {
        let mut bound = vec![false; width];
        let mut remaining: Vec<Input<'a>> = inputs;
        let mut ordered = Vec::with_capacity(remaining.len());
        while !remaining.is_empty() {
            let score = |i: &Input, bound: &[bool]| -> (bool, bool, usize) {
                let (nonzero_default, connected, size) = match i {
                    Input::Leaf { rel, args, complement } => {
                        let mut size = rel.len();
                        let mut connected = false;
                        for (pos, a) in args.iter().enumerate() {
                            match a {
                                Arg::Const(s) => size = size.min(rel.rows_with(pos, *s).len()),
                                Arg::Assign(slot) | Arg::Check(slot) | Arg::Repeat(slot) => connected |= bound[*slot],
                            }
                        }
                        (*complement, connected, size)
                    }
                    Input::Tab { table, slots, .. } => (
                        table.has_default(),
                        slots.iter().any(|&s| bound[s]),
                        table.rows.len(),
                    ),
                };
                (nonzero_default, !connected, size)
            };
            let best = (0..remaining.len())
                .min_by_key(|&i| score(&remaining[i], &bound))
                .expect("nonempty");
            let mut input = remaining.swap_remove(best);
            match &mut input {
                Input::Leaf { args, complement, .. } => {
                    let before = bound.clone();
                    for a in args.iter_mut() {
                        if let Arg::Assign(slot) = *a {
                            if before[slot] {
                                *a = Arg::Check(slot);
                            } else if bound[slot] {
                                *a = Arg::Repeat(slot);
                            } else {
                                if *complement {
                                    return Err(self.unsupported("complemented atom with unbound variables"));
                                }
                                bound[slot] = true;
                            }
                        }
                    }
                }
                Input::Tab {
                    table,
                    slots,
                    bound: tb,
                    index,
                } => {
                    *tb = (0..slots.len()).filter(|&i| bound[slots[i]]).collect();
                    if tb.len() < slots.len() {
                        if table.has_default() {
                            return Err(self.unsupported("table with nonzero default joined on unbound columns"));
                        }
                        let mut idx: FxHashMap<Vec<Sym>, Vec<(Vec<Sym>, f64)>> = FxHashMap::default();
                        for (k, p) in &table.rows {
                            let sub: Vec<Sym> = tb.iter().map(|&i| k[i]).collect();
                            idx.entry(sub).or_default().push((k.clone(), *p));
                        }
                        *index = Some(idx);
                    }
                    for &s in slots.iter() {
                        bound[s] = true;
                    }
                }
            }
            ordered.push(input);
        }
        if bound.iter().any(|b| !b) {
            return Err(self.unsupported("join leaves a column unbound"));
        }
        Ok(ordered)
    }

    /// Join where every input has a nonzero default: all inputs must share
    /// the same columns; the output covers the union of their keys.
    fn outer_join(&self, inputs: Vec<Input<'a>>, cols: &[String], sink: &mut dyn FnMut(&[Sym], f64)) -> Result<(), EvalError> {
        let mut tables = Vec::new();
        for input in inputs {
            let t = match input {
                Input::Tab { table, slots, .. } => {
                    if slots.len() != cols.len() {
                        return Err(self.unsupported("join of complemented inputs over different columns"));
                    }
                    // reorder to output slot order
                    let rows = table
                        .rows
                        .into_iter()
                        .map(|(k, p)| {
                            let mut nk = vec![Sym(0); k.len()];
                            for (i, s) in slots.iter().enumerate() {
                                nk[*s] = k[i];
                            }
                            (nk, p)
                        })
                        .collect();
                    Table {
                        cols: cols.to_vec(),
                        rows,
                        default: table.default,
                    }
                }
                Input::Leaf { rel, args, complement } => {
                    let mut rows = FxHashMap::default();
                    let mut seen = BTreeSet::new();
                    let mut key = vec![Sym(0); cols.len()];
                    'rows: for (tuple, p) in rel.iter() {
                        for (a, s) in args.iter().zip(tuple) {
                            match a {
                                Arg::Const(c) if c != s => continue 'rows,
                                Arg::Const(_) => {}
                                Arg::Assign(slot) | Arg::Check(slot) | Arg::Repeat(slot) => key[*slot] = *s,
                            }
                        }
                        seen.clear();
                        for a in &args {
                            if let Arg::Assign(slot) | Arg::Check(slot) | Arg::Repeat(slot) = a {
                                seen.insert(*slot);
                            }
                        }
                        if seen.len() != cols.len() {
                            return Err(self.unsupported("join of complemented inputs over different columns"));
                        }
                        let consistent = args.iter().zip(tuple).all(|(a, s)| match a {
                            Arg::Assign(slot) | Arg::Check(slot) | Arg::Repeat(slot) => key[*slot] == *s,
                            Arg::Const(_) => true,
                        });
                        if consistent {
                            rows.insert(key.clone(), if complement { 1.0 - p } else { p });
                        }
                    }
                    Table {
                        cols: cols.to_vec(),
                        rows,
                        default: if complement { 1.0 } else { 0.0 },
                    }
                }
            };
            tables.push(t);
        }
        let joined = self.combine(tables, &mut |ps| ps.iter().product())?;
        for (k, p) in &joined.rows {
            sink(k, *p);
        }
        Ok(())
    }
}

/// Depth-first index nested-loop join over ordered inputs.
fn enumerate(
    inputs: &[Input],
    depth: usize,
    slots: &mut Vec<Sym>,
    prob: f64,
    scratch: &mut Vec<Sym>,
    sink: &mut dyn FnMut(&[Sym], f64),
) {
    let Some(input) = inputs.get(depth) else {
        sink(slots, prob);
        return;
    };
    match input {
        Input::Leaf { rel, args, complement } => {
            let fully_bound = args.iter().all(|a| !matches!(a, Arg::Assign(_)));
            if fully_bound {
                scratch.clear();
                scratch.extend(args.iter().map(|a| match a {
                    Arg::Const(s) => *s,
                    Arg::Check(slot) | Arg::Repeat(slot) | Arg::Assign(slot) => slots[*slot],
                }));
                let p = rel.lookup(scratch);
                let p = if *complement { 1.0 - p } else { p };
                if p > 0.0 {
                    enumerate(inputs, depth + 1, slots, prob * p, scratch, sink);
                }
                return;
            }
            // pick the most selective known position
            let mut best: Option<&[u32]> = None;
            for (pos, a) in args.iter().enumerate() {
                let sym = match a {
                    Arg::Const(s) => *s,
                    Arg::Check(slot) => slots[*slot],
                    Arg::Assign(_) | Arg::Repeat(_) => continue,
                };
                let rows = rel.rows_with(pos, sym);
                if best.is_none_or(|b| rows.len() < b.len()) {
                    best = Some(rows);
                }
            }
            let mut visit = |row: usize, slots: &mut Vec<Sym>, scratch: &mut Vec<Sym>| {
                let p = rel.prob(row);
                if p <= 0.0 {
                    return;
                }
                let tuple = rel.tuple(row);
                let mut ok = true;
                for (a, s) in args.iter().zip(tuple) {
                    match a {
                        Arg::Const(c) => ok = c == s,
                        Arg::Check(slot) | Arg::Repeat(slot) => ok = slots[*slot] == *s,
                        Arg::Assign(slot) => slots[*slot] = *s,
                    }
                    if !ok {
                        break;
                    }
                }
                if ok {
                    enumerate(inputs, depth + 1, slots, prob * p, scratch, sink);
                }
            };
            match best {
                Some(rows) => {
                    for &r in rows {
                        visit(r as usize, slots, scratch);
                    }
                }
                None => {
                    for r in 0..rel.len() {
                        visit(r, slots, scratch);
                    }
                }
            }
        }
        Input::Tab {
            table,
            slots: tslots,
            bound,
            index,
        } => match index {
            None => {
                scratch.clear();
                scratch.extend(tslots.iter().map(|&s| slots[s]));
                let p = table.get(scratch);
                if p > 0.0 {
                    enumerate(inputs, depth + 1, slots, prob * p, scratch, sink);
                }
            }
            Some(idx) => {
                let sub: Vec<Sym> = bound.iter().map(|&i| slots[tslots[i]]).collect();
                if let Some(rows) = idx.get(&sub) {
                    for (k, p) in rows {
                        if *p <= 0.0 {
                            continue;
                        }
                        for (i, &s) in tslots.iter().enumerate() {
                            slots[s] = k[i];
                        }
                        enumerate(inputs, depth + 1, slots, prob * p, scratch, sink);
                    }
                }
            }
        },
    }
}
