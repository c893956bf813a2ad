//! Probabilistic relations: tuple-independent facts and mutually exclusive choices.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use thiserror::Error;

use crate::dsl::{ValidatedProgram, CHOICE_SUM_EPSILON};

#[derive(Debug, Error)]
pub enum DbError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{location}: probability {value} is outside [0, 1]")]
    ProbabilityOutOfRange { location: String, value: f64 },
    #[error("relation `{relation}` contains the tuple ({args}) twice")]
    DuplicateTuple { relation: String, args: String },
    #[error("choice relation `{relation}` has total probability {sum} > 1")]
    ChoiceSum { relation: String, sum: f64 },
    #[error("choice relation `{relation}` needs at least one element")]
    EmptyChoice { relation: String },
    #[error("relation `{relation}` has arity {expected}, got a tuple of length {found}")]
    ArityMismatch {
        relation: String,
        expected: usize,
        found: usize,
    },
    #[error("relation `{0}` is already defined")]
    DuplicateRelation(String),
}

/// Interned constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sym(pub(crate) u32);

impl Sym {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Default)]
pub struct Interner {
    ids: HashMap<String, Sym>,
    names: Vec<String>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> Sym {
        if let Some(&s) = self.ids.get(name) {
            return s;
        }
        let s = Sym(u32::try_from(self.names.len()).expect("fewer than 2^32 symbols"));
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), s);
        s
    }

    pub fn get(&self, name: &str) -> Option<Sym> {
        self.ids.get(name).copied()
    }

    pub fn resolve(&self, sym: Sym) -> &str {
        &self.names[sym.index()]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Semantics {
    /// Every tuple is an independent Bernoulli event.
    Independent,
    /// The whole relation is one group of mutually exclusive tuples; at most
    /// one holds in any world.
    Choice,
}

impl fmt::Display for Semantics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Semantics::Independent => f.write_str("independent"),
            Semantics::Choice => f.write_str("choice"),
        }
    }
}

#[derive(Debug, Clone)]
enum Probs {
    /// Deterministic relation: every tuple has probability 1.
    Certain,
    Explicit(Vec<f64>),
}

/// CSR index from a symbol to the rows holding it at one position.
#[derive(Debug)]
struct PositionIndex {
    offsets: Vec<u32>,
    rows: Vec<u32>,
}

impl PositionIndex {
    fn build(data: &[Sym], arity: usize, position: usize) -> Self {
        let n = if arity == 0 { 0 } else { data.len() / arity };
        let max = (0..n).map(|r| data[r * arity + position].0).max().unwrap_or(0) as usize;
        let mut offsets = vec![0u32; max + 2];
        for r in 0..n {
            offsets[data[r * arity + position].index() + 1] += 1;
        }
        for i in 1..offsets.len() {
            offsets[i] += offsets[i - 1];
        }
        let mut cursor = offsets.clone();
        let mut rows = vec![0u32; n];
        for r in 0..n {
            let s = data[r * arity + position].index();
            rows[cursor[s] as usize] = r as u32;
            cursor[s] += 1;
        }
        PositionIndex { offsets, rows }
    }

    fn rows(&self, sym: Sym) -> &[u32] {
        let i = sym.index();
        if i + 1 >= self.offsets.len() {
            return &[];
        }
        &self.rows[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }
}

/// A named probabilistic relation. Absent tuples have probability 0.
#[derive(Debug)]
pub struct ProbRelation {
    name: String,
    arity: usize,
    semantics: Semantics,
    data: Vec<Sym>,
    len: usize,
    probs: Probs,
    index: OnceLock<Vec<PositionIndex>>,
}

impl Clone for ProbRelation {
    fn clone(&self) -> Self {
        ProbRelation {
            name: self.name.clone(),
            arity: self.arity,
            semantics: self.semantics,
            data: self.data.clone(),
            len: self.len,
            probs: self.probs.clone(),
            index: OnceLock::new(),
        }
    }
}

impl PartialEq for ProbRelation {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.arity == other.arity
            && self.semantics == other.semantics
            && self.data == other.data
            && (0..self.len).all(|i| self.prob(i) == other.prob(i))
    }
}

impl ProbRelation {
    /// Builds a relation, checking arity, probability range, duplicates and
    /// (for choices) the total mass.
    pub fn new(
        name: impl Into<String>,
        arity: usize,
        semantics: Semantics,
        tuples: Vec<(Vec<Sym>, f64)>,
    ) -> Result<Self, DbError> {
        let name = name.into();
        let mut data = Vec::with_capacity(tuples.len() * arity);
        let mut probs = Vec::with_capacity(tuples.len());
        for (args, p) in &tuples {
            if args.len() != arity {
                return Err(DbError::ArityMismatch {
                    relation: name,
                    expected: arity,
                    found: args.len(),
                });
            }
            if !(0.0..=1.0).contains(p) {
                return Err(DbError::ProbabilityOutOfRange {
                    location: format!("relation `{name}`"),
                    value: *p,
                });
            }
            data.extend_from_slice(args);
            probs.push(*p);
        }
        let all_certain = probs.iter().all(|&p| p == 1.0) && semantics == Semantics::Independent;
        let rel = ProbRelation {
            name,
            arity,
            semantics,
            len: tuples.len(),
            data,
            probs: if all_certain {
                Probs::Certain
            } else {
                Probs::Explicit(probs)
            },
            index: OnceLock::new(),
        };
        rel.check_duplicates()?;
        rel.check_choice_mass()?;
        Ok(rel)
    }

    /// Builds a deterministic relation from rows the caller guarantees to be
    /// distinct.
    pub(crate) fn certain_unchecked(name: impl Into<String>, arity: usize, data: Vec<Sym>) -> Self {
        let len = if arity == 0 { 0 } else { data.len() / arity };
        ProbRelation {
            name: name.into(),
            arity,
            semantics: Semantics::Independent,
            data,
            len,
            probs: Probs::Certain,
            index: OnceLock::new(),
        }
    }

    /// Builds an independent relation from distinct rows (unchecked).
    pub(crate) fn independent_unchecked(
        name: impl Into<String>,
        arity: usize,
        data: Vec<Sym>,
        probs: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(data.len(), probs.len() * arity);
        ProbRelation {
            name: name.into(),
            arity,
            semantics: Semantics::Independent,
            len: probs.len(),
            data,
            probs: Probs::Explicit(probs),
            index: OnceLock::new(),
        }
    }

    /// One tuple per element, each with probability `1/N`.
    pub fn make_equiprobable_choice(name: impl Into<String>, elements: &[Sym]) -> Result<Self, DbError> {
        let name = name.into();
        if elements.is_empty() {
            return Err(DbError::EmptyChoice { relation: name });
        }
        let p = 1.0 / elements.len() as f64;
        Self::new(
            name,
            1,
            Semantics::Choice,
            elements.iter().map(|&e| (vec![e], p)).collect(),
        )
    }

    fn check_duplicates(&self) -> Result<(), DbError> {
        if self.arity == 0 {
            if self.len > 1 {
                return Err(DbError::DuplicateTuple {
                    relation: self.name.clone(),
                    args: String::new(),
                });
            }
            return Ok(());
        }
        let mut order: Vec<usize> = (0..self.len).collect();
        order.sort_unstable_by(|&a, &b| self.tuple(a).cmp(self.tuple(b)));
        for w in order.windows(2) {
            if self.tuple(w[0]) == self.tuple(w[1]) {
                return Err(DbError::DuplicateTuple {
                    relation: self.name.clone(),
                    args: format!("{:?}", self.tuple(w[0])),
                });
            }
        }
        Ok(())
    }

    fn check_choice_mass(&self) -> Result<(), DbError> {
        if self.semantics == Semantics::Choice {
            let sum = self.total_mass();
            if sum > 1.0 + CHOICE_SUM_EPSILON {
                return Err(DbError::ChoiceSum {
                    relation: self.name.clone(),
                    sum,
                });
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn semantics(&self) -> Semantics {
        self.semantics
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn tuple(&self, row: usize) -> &[Sym] {
        &self.data[row * self.arity..(row + 1) * self.arity]
    }

    pub fn prob(&self, row: usize) -> f64 {
        match &self.probs {
            Probs::Certain => 1.0,
            Probs::Explicit(p) => p[row],
        }
    }

    pub fn is_certain(&self) -> bool {
        matches!(self.probs, Probs::Certain)
    }

    /// Sum of tuple probabilities (compensated).
    pub fn total_mass(&self) -> f64 {
        crate::ra::neumaier_sum((0..self.len).map(|i| self.prob(i)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[Sym], f64)> + '_ {
        (0..self.len).map(move |i| (self.tuple(i), self.prob(i)))
    }

    fn indexes(&self) -> &[PositionIndex] {
        self.index.get_or_init(|| {
            (0..self.arity)
                .map(|p| PositionIndex::build(&self.data, self.arity, p))
                .collect()
        })
    }

    /// Rows whose value at `position` is `sym`.
    pub fn rows_with(&self, position: usize, sym: Sym) -> &[u32] {
        self.indexes()[position].rows(sym)
    }

    /// Probability of a full tuple (0 when absent).
    pub fn lookup(&self, key: &[Sym]) -> f64 {
        if self.arity == 0 {
            return if self.len > 0 { self.prob(0) } else { 0.0 };
        }
        let idx = self.indexes();
        let best = (0..self.arity)
            .min_by_key(|&p| idx[p].rows(key[p]).len())
            .expect("arity > 0");
        idx[best]
            .rows(key[best])
            .iter()
            .find(|&&r| self.tuple(r as usize) == key)
            .map_or(0.0, |&r| self.prob(r as usize))
    }

    /// Reads a tab-separated file with a header row. `schema` names the
    /// columns forming the tuple, in order; `prob_column` (conventionally
    /// `p`) holds probabilities, otherwise every tuple has probability 1.
    pub fn load_tsv(
        interner: &mut Interner,
        name: &str,
        path: &Path,
        schema: &[&str],
        prob_column: Option<&str>,
        semantics: Semantics,
    ) -> Result<Self, DbError> {
        let text = std::fs::read_to_string(path).map_err(|source| DbError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let malformed = |line: usize, message: String| DbError::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| malformed(1, "missing header row".into()))?;
        let columns: Vec<&str> = header.trim_end_matches('\r').split('\t').map(str::trim).collect();
        let position = |c: &str| {
            columns
                .iter()
                .position(|h| *h == c)
                .ok_or_else(|| malformed(1, format!("missing column `{c}` in header")))
        };
        let key_cols = schema.iter().map(|c| position(c)).collect::<Result<Vec<_>, _>>()?;
        let prob_col = prob_column.map(position).transpose()?;

        let mut tuples = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
            if fields.len() != columns.len() {
                return Err(malformed(
                    lineno,
                    format!("expected {} fields, found {}", columns.len(), fields.len()),
                ));
            }
            let args = key_cols.iter().map(|&c| interner.intern(fields[c].trim())).collect();
            let p = match prob_col {
                None => 1.0,
                Some(c) => {
                    let raw = fields[c].trim();
                    let p: f64 = raw
                        .parse()
                        .map_err(|_| malformed(lineno, format!("invalid probability `{raw}`")))?;
                    if !(0.0..=1.0).contains(&p) {
                        return Err(DbError::ProbabilityOutOfRange {
                            location: format!("{}:{lineno}", path.display()),
                            value: p,
                        });
                    }
                    p
                }
            };
            tuples.push((args, p));
        }
        Self::new(name, schema.len(), semantics, tuples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelationInfo {
    pub arity: usize,
    pub semantics: Semantics,
}

/// Relation names with their arity and semantics.
pub type Schema = BTreeMap<String, RelationInfo>;

/// Named probabilistic relations sharing one symbol table.
#[derive(Debug, Clone, Default)]
pub struct ProbDatabase {
    interner: Interner,
    relations: BTreeMap<String, ProbRelation>,
}

impl ProbDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn interner(&self) -> &Interner {
        &self.interner
    }

    pub fn interner_mut(&mut self) -> &mut Interner {
        &mut self.interner
    }

    pub fn intern(&mut self, name: &str) -> Sym {
        self.interner.intern(name)
    }

    pub fn insert(&mut self, relation: ProbRelation) -> Result<(), DbError> {
        if self.relations.contains_key(&relation.name) {
            return Err(DbError::DuplicateRelation(relation.name));
        }
        self.relations.insert(relation.name.clone(), relation);
        Ok(())
    }

    pub fn relation(&self, name: &str) -> Option<&ProbRelation> {
        self.relations.get(name)
    }

    pub fn relations(&self) -> impl Iterator<Item = &ProbRelation> {
        self.relations.values()
    }

    pub fn schema(&self) -> Schema {
        self.relations
            .values()
            .map(|r| {
                (
                    r.name.clone(),
                    RelationInfo {
                        arity: r.arity,
                        semantics: r.semantics,
                    },
                )
            })
            .collect()
    }

    /// Builds the extensional database of a program: one relation per fact
    /// block and per choice block, plus empty relations for extensional
    /// predicates that only occur in rule bodies.
    pub fn from_program(program: &ValidatedProgram) -> Result<Self, DbError> {
        let mut db = ProbDatabase::new();
        let p = program.program();
        for block in &p.facts {
            let arity = program.arity(&block.relation).unwrap_or(0);
            let tuples = block
                .tuples
                .iter()
                .map(|t| (t.args.iter().map(|a| db.intern(a)).collect(), t.probability))
                .collect();
            let rel = ProbRelation::new(&block.relation, arity, Semantics::Independent, tuples)?;
            db.insert(rel)?;
        }
        for block in &p.choices {
            let arity = program.arity(&block.relation).unwrap_or(0);
            let tuples = block
                .tuples
                .iter()
                .map(|t| (t.args.iter().map(|a| db.intern(a)).collect(), t.probability))
                .collect();
            let rel = ProbRelation::new(&block.relation, arity, Semantics::Choice, tuples)?;
            db.insert(rel)?;
        }
        for (pred, arity) in program.predicates() {
            if !program.is_intensional(pred) && db.relation(pred).is_none() {
                db.insert(ProbRelation::new(pred, arity, Semantics::Independent, Vec::new())?)?;
            }
        }
        Ok(db)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tsv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_probability_column() {
        let f = tsv("study\tterm\tp\ns1\tinsula\t0.95\ns2\tspeech\t0.5\n");
        let mut interner = Interner::default();
        let rel = ProbRelation::load_tsv(
            &mut interner,
            "TermInStudy",
            f.path(),
            &["study", "term"],
            Some("p"),
            Semantics::Independent,
        )
        .unwrap();
        assert_eq!(rel.len(), 2);
        let key = [interner.get("s1").unwrap(), interner.get("insula").unwrap()];
        assert_eq!(rel.lookup(&key), 0.95);
        assert_eq!(rel.lookup(&[key[1], key[0]]), 0.0);
    }

    #[test]
    fn missing_probability_column_means_certain() {
        let f = tsv("voxel\tstudy\nv1\ts1\nv2\ts1\n");
        let mut interner = Interner::default();
        let rel = ProbRelation::load_tsv(
            &mut interner,
            "VoxelReported",
            f.path(),
            &["voxel", "study"],
            None,
            Semantics::Independent,
        )
        .unwrap();
        assert!(rel.is_certain());
        assert!(rel.iter().all(|(_, p)| p == 1.0));
    }

    #[test]
    fn out_of_range_probability_reports_line() {
        let f = tsv("a\tp\nx\t0.2\ny\t1.3\n");
        let mut interner = Interner::default();
        let err = ProbRelation::load_tsv(&mut interner, "R", f.path(), &["a"], Some("p"), Semantics::Independent)
            .unwrap_err();
        match err {
            DbError::ProbabilityOutOfRange { location, value } => {
                assert!(location.ends_with(":3"), "{location}");
                assert_eq!(value, 1.3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let f = tsv("a\tb\nx\ty\nz\n");
        let mut interner = Interner::default();
        let err = ProbRelation::load_tsv(&mut interner, "R", f.path(), &["a", "b"], None, Semantics::Independent)
            .unwrap_err();
        assert!(matches!(err, DbError::Malformed { line: 3, .. }));
    }

    #[test]
    fn loading_is_idempotent() {
        let f = tsv("a\tb\tp\nx\ty\t0.3\nz\tw\t1\n");
        let mut interner = Interner::default();
        let load = |i: &mut Interner| {
            ProbRelation::load_tsv(i, "R", f.path(), &["a", "b"], Some("p"), Semantics::Independent).unwrap()
        };
        let a = load(&mut interner);
        let b = load(&mut interner);
        assert_eq!(a, b);
    }

    #[test]
    fn equiprobable_choice() {
        let mut interner = Interner::default();
        let elems: Vec<Sym> = ["s1", "s2", "s3", "s4"].iter().map(|s| interner.intern(s)).collect();
        let rel = ProbRelation::make_equiprobable_choice("SelectedStudy", &elems).unwrap();
        assert_eq!(rel.semantics(), Semantics::Choice);
        assert!(rel.iter().all(|(_, p)| p == 0.25));

        let one = ProbRelation::make_equiprobable_choice("SelectedStudy", &elems[..1]).unwrap();
        assert_eq!(one.prob(0), 1.0);

        assert!(matches!(
            ProbRelation::make_equiprobable_choice("SelectedStudy", &[]),
            Err(DbError::EmptyChoice { .. })
        ));
    }

    #[test]
    fn large_choice_sums_to_one() {
        let mut interner = Interner::default();
        let elems: Vec<Sym> = (0..14371).map(|i| interner.intern(&format!("study{i}"))).collect();
        let rel = ProbRelation::make_equiprobable_choice("SelectedStudy", &elems).unwrap();
        assert_eq!(rel.prob(17), 1.0 / 14371.0);
        assert!((rel.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicates_and_choice_mass_rejected() {
        let mut i = Interner::default();
        let a = i.intern("a");
        let b = i.intern("b");
        assert!(matches!(
            ProbRelation::new("R", 1, Semantics::Independent, vec![(vec![a], 0.1), (vec![a], 0.2)]),
            Err(DbError::DuplicateTuple { .. })
        ));
        assert!(matches!(
            ProbRelation::new("C", 1, Semantics::Choice, vec![(vec![a], 0.7), (vec![b], 0.4)]),
            Err(DbError::ChoiceSum { .. })
        ));
    }

    #[test]
    fn position_index() {
        let mut i = Interner::default();
        let syms: Vec<Sym> = ["a", "b", "c"].iter().map(|s| i.intern(s)).collect();
        let rel = ProbRelation::new(
            "S",
            2,
            Semantics::Independent,
            vec![
                (vec![syms[0], syms[1]], 0.5),
                (vec![syms[0], syms[2]], 0.25),
                (vec![syms[2], syms[1]], 1.0),
            ],
        )
        .unwrap();
        assert_eq!(rel.rows_with(0, syms[0]).len(), 2);
        assert_eq!(rel.rows_with(1, syms[1]).len(), 2);
        assert_eq!(rel.rows_with(1, syms[0]).len(), 0);
        let unseen = i.intern("zzz");
        assert!(rel.rows_with(0, unseen).is_empty());
        assert_eq!(rel.lookup(&[syms[0], syms[2]]), 0.25);
    }
}
