//! CBMA datasets, their encoding as a probabilistic program and closed-form
//! estimators of `P[Activation(v) | φ]` for Boolean term formulas φ.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{self, Atom, Formula, ParseError, Query, Term, ValidatedProgram};
use crate::probdb::{DbError, ProbDatabase, ProbRelation, Sym};
use crate::ra::{Neumaier, ProbTable, MIN_CONDITION};
use crate::stats::{bonferroni_threshold, g_test, ContingencyTable2x2, GTest};

pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_ALPHA: f64 = 300.0;
/// Bonferroni base level used for forward-inference maps.
pub const DEFAULT_SIGNIFICANCE: f64 = 0.01;
/// Terms repeated in a formula are handled by enumerating their joint
/// assignments; this bounds the enumeration.
pub const MAX_REPEATED_TERMS: usize = 20;

pub const STUDY: &str = "SelectedStudy";
pub const TERM_IN_STUDY: &str = "TermInStudy";
pub const VOXEL_REPORTED: &str = "VoxelReported";
pub const ACTIVATION: &str = "Activation";
pub const TERM_ASSOCIATION: &str = "TermAssociation";

/// Rules shared by every encoded dataset.
pub const PROGRAM_RULES: &str = "\
Activation(v) :- SelectedStudy(s), VoxelReported(v, s).
TermAssociation(t) :- SelectedStudy(s), TermInStudy(t, s).
";

#[derive(Debug, Error)]
pub enum CbmaError {
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid threshold configuration: {0}")]
    InvalidConfig(String),
    #[error("term `{0}` does not occur in the dataset")]
    UnknownTerm(String),
    #[error("no study matches the condition (total weight {total_weight:e})")]
    NoMatchingStudies { total_weight: f64 },
    #[error("formula repeats {count} distinct terms; at most {MAX_REPEATED_TERMS} are supported")]
    TooManyRepeatedTerms { count: usize },
    #[error("invalid query: {0}")]
    Query(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Database(#[from] DbError),
}

/// Sparse study × term TF-IDF matrix and sparse study × voxel reported
/// activations.
#[derive(Debug, Clone, PartialEq)]
pub struct CbmaDataset {
    studies: Vec<String>,
    terms: Vec<String>,
    voxels: Vec<String>,
    term_index: HashMap<String, u32>,
    /// per term: (study, tfidf > 0), sorted by study
    features: Vec<Vec<(u32, f64)>>,
    /// per study: reported voxels, sorted
    reported: Vec<Vec<u32>>,
}

impl CbmaDataset {
    /// Builds a dataset from index triples. Zero TF-IDF entries are dropped;
    /// duplicates are rejected.
    pub fn new(
        studies: Vec<String>,
        terms: Vec<String>,
        voxels: Vec<String>,
        features: impl IntoIterator<Item = (u32, u32, f64)>,
        activations: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self, CbmaError> {
        let invalid = |m: String| CbmaError::InvalidDataset(m);
        if studies.is_empty() || terms.is_empty() || voxels.is_empty() {
            return Err(invalid("studies, terms and voxels must all be nonempty".into()));
        }
        for (kind, ids) in [("study", &studies), ("term", &terms), ("voxel", &voxels)] {
            let mut sorted: Vec<&String> = ids.iter().collect();
            sorted.sort();
            if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
                return Err(invalid(format!("duplicate {kind} id `{}`", w[0])));
            }
        }
        let (n, m, k) = (studies.len(), terms.len(), voxels.len());
        let mut by_term: Vec<Vec<(u32, f64)>> = vec![Vec::new(); m];
        for (s, t, x) in features {
            if s as usize >= n || t as usize >= m {
                return Err(invalid(format!("feature index ({s}, {t}) out of range")));
            }
            if !x.is_finite() || x < 0.0 {
                return Err(invalid(format!(
                    "TF-IDF of ({}, {}) is {x}; values must be finite and nonnegative",
                    studies[s as usize], terms[t as usize]
                )));
            }
            if x > 0.0 {
                by_term[t as usize].push((s, x));
            }
        }
        for (t, col) in by_term.iter_mut().enumerate() {
            col.sort_unstable_by_key(|e| e.0);
            if let Some(w) = col.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(invalid(format!(
                    "duplicate TF-IDF entry for ({}, {})",
                    studies[w[0].0 as usize], terms[t]
                )));
            }
        }
        let mut reported: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (s, v) in activations {
            if s as usize >= n || v as usize >= k {
                return Err(invalid(format!("activation index ({s}, {v}) out of range")));
            }
            reported[s as usize].push(v);
        }
        for row in &mut reported {
            row.sort_unstable();
            row.dedup();
        }
        let term_index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Ok(CbmaDataset {
            studies,
            terms,
            voxels,
            term_index,
            features: by_term,
            reported,
        })
    }

    /// Builds a dataset from id-keyed records. Ids are numbered in order of
    /// first appearance (features before activations).
    pub fn from_records<S: AsRef<str>>(
        features: &[(S, S, f64)],
        activations: &[(S, S)],
    ) -> Result<Self, CbmaError> {
        let mut studies = IdList::default();
        let mut terms = IdList::default();
        let mut voxels = IdList::default();
        let f: Vec<_> = features
            .iter()
            .map(|(s, t, x)| (studies.id(s.as_ref()), terms.id(t.as_ref()), *x))
            .collect();
        let a: Vec<_> = activations
            .iter()
            .map(|(s, v)| (studies.id(s.as_ref()), voxels.id(v.as_ref())))
            .collect();
        Self::new(studies.names, terms.names, voxels.names, f, a)
    }

    /// Reads `features.tsv` (study_id, term, tfidf) and `activations.tsv`
    /// (study_id, voxel_id) from a directory. Optional `studies.tsv`
    /// (study_id) and `voxels.tsv` (voxel_id) fix the full id lists,
    /// including studies or voxels without any entry.
    pub fn load(dir: &Path) -> Result<Self, CbmaError> {
        let mut studies = IdList::default();
        let mut terms = IdList::default();
        let mut voxels = IdList::default();
        let studies_path = dir.join("studies.tsv");
        if studies_path.exists() {
            for (_, row) in read_tsv(&studies_path, &["study_id"])? {
                studies.id(&row[0]);
            }
        }
        let voxels_path = dir.join("voxels.tsv");
        if voxels_path.exists() {
            for (_, row) in read_tsv(&voxels_path, &["voxel_id"])? {
                voxels.id(&row[0]);
            }
        }
        let fixed_studies = studies_path.exists();
        let fixed_voxels = voxels_path.exists();

        let features_path = dir.join("features.tsv");
        let mut features = Vec::new();
        for (line, row) in read_tsv(&features_path, &["study_id", "term", "tfidf"])? {
            let malformed = |message: String| CbmaError::Malformed {
                path: features_path.clone(),
                line,
                message,
            };
            let x: f64 = row[2]
                .parse()
                .map_err(|_| malformed(format!("invalid TF-IDF value `{}`", row[2])))?;
            if !x.is_finite() || x < 0.0 {
                return Err(malformed(format!("TF-IDF value {x} must be finite and nonnegative")));
            }
            let s = lookup_or_insert(&mut studies, &row[0], fixed_studies)
                .ok_or_else(|| malformed(format!("study `{}` is not listed in studies.tsv", row[0])))?;
            features.push((s, terms.id(&row[1]), x));
        }
        let activations_path = dir.join("activations.tsv");
        let mut activations = Vec::new();
        for (line, row) in read_tsv(&activations_path, &["study_id", "voxel_id"])? {
            let malformed = |message: String| CbmaError::Malformed {
                path: activations_path.clone(),
                line,
                message,
            };
            let s = lookup_or_insert(&mut studies, &row[0], fixed_studies)
                .ok_or_else(|| malformed(format!("study `{}` is not listed in studies.tsv", row[0])))?;
            let v = lookup_or_insert(&mut voxels, &row[1], fixed_voxels)
                .ok_or_else(|| malformed(format!("voxel `{}` is not listed in voxels.tsv", row[1])))?;
            activations.push((s, v));
        }
        Self::new(studies.names, terms.names, voxels.names, features, activations)
    }

    /// Writes the four TSV files read by [`CbmaDataset::load`].
    pub fn write(&self, dir: &Path) -> Result<(), CbmaError> {
        let io_err = |path: PathBuf| move |source| CbmaError::Io { path, source };
        std::fs::create_dir_all(dir).map_err(io_err(dir.to_path_buf()))?;
        let mut studies = String::from("study_id\n");
        self.studies.iter().for_each(|s| {
            let _ = writeln!(studies, "{s}");
        });
        let mut voxels = String::from("voxel_id\n");
        self.voxels.iter().for_each(|v| {
            let _ = writeln!(voxels, "{v}");
        });
        let mut features = String::from("study_id\tterm\ttfidf\n");
        let mut rows: Vec<(u32, u32, f64)> = self
            .features
            .iter()
            .enumerate()
            .flat_map(|(t, col)| col.iter().map(move |&(s, x)| (s, t as u32, x)))
            .collect();
        rows.sort_unstable_by_key(|r| (r.0, r.1));
        for (s, t, x) in rows {
            let _ = writeln!(features, "{}\t{}\t{x}", self.studies[s as usize], self.terms[t as usize]);
        }
        let mut activations = String::from("study_id\tvoxel_id\n");
        for (s, row) in self.reported.iter().enumerate() {
            for &v in row {
                let _ = writeln!(activations, "{}\t{}", self.studies[s], self.voxels[v as usize]);
            }
        }
        for (name, body) in [
            ("studies.tsv", studies),
            ("voxels.tsv", voxels),
            ("features.tsv", features),
            ("activations.tsv", activations),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(io_err(path.clone()))?;
        }
        Ok(())
    }

    pub fn n_studies(&self) -> usize {
        self.studies.len()
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn n_voxels(&self) -> usize {
        self.voxels.len()
    }

    pub fn studies(&self) -> &[String] {
        &self.studies
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn voxels(&self) -> &[String] {
        &self.voxels
    }

    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.term_index.get(term).map(|&i| i as usize)
    }

    /// Nonzero TF-IDF entries of a term as (study, value), sorted by study.
    pub fn term_column(&self, term: usize) -> &[(u32, f64)] {
        &self.features[term]
    }

    /// TF-IDF of a (study, term) pair, 0 when absent.
    pub fn tfidf(&self, study: usize, term: usize) -> f64 {
        let col = &self.features[term];
        col.binary_search_by_key(&(study as u32), |e| e.0)
            .map_or(0.0, |i| col[i].1)
    }

    /// Voxels reported by a study, sorted.
    pub fn reported(&self, study: usize) -> &[u32] {
        &self.reported[study]
    }

    pub fn is_reported(&self, study: usize, voxel: usize) -> bool {
        self.reported[study].binary_search(&(voxel as u32)).is_ok()
    }

    /// Number of studies reporting each voxel.
    pub fn voxel_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.voxels.len()];
        for row in &self.reported {
            for &v in row {
                counts[v as usize] += 1;
            }
        }
        counts
    }

    /// Number of studies with a nonzero TF-IDF entry for each term.
    pub fn document_frequencies(&self) -> Vec<usize> {
        self.features.iter().map(Vec::len).collect()
    }

    /// Total number of nonzero TF-IDF entries.
    pub fn feature_count(&self) -> usize {
        self.features.iter().map(Vec::len).sum()
    }

    /// Total number of reported (study, voxel) pairs.
    pub fn activation_count(&self) -> usize {
        self.reported.iter().map(Vec::len).sum()
    }

    /// The dataset restricted to the given studies, in the given order.
    /// Terms and voxels are kept unchanged.
    pub fn subset(&self, studies: &[usize]) -> Result<Self, CbmaError> {
        if studies.is_empty() {
            return Err(CbmaError::InvalidDataset("empty study subset".into()));
        }
        let mut new_index = vec![u32::MAX; self.studies.len()];
        for (new, &old) in studies.iter().enumerate() {
            if old >= self.studies.len() {
                return Err(CbmaError::InvalidDataset(format!("study index {old} out of range")));
            }
            if new_index[old] != u32::MAX {
                return Err(CbmaError::InvalidDataset(format!("study index {old} selected twice")));
            }
            new_index[old] = new as u32;
        }
        let features = self
            .features
            .iter()
            .map(|col| {
                let mut c: Vec<(u32, f64)> = col
                    .iter()
                    .filter(|(s, _)| new_index[*s as usize] != u32::MAX)
                    .map(|&(s, x)| (new_index[s as usize], x))
                    .collect();
                c.sort_unstable_by_key(|e| e.0);
                c
            })
            .collect();
        Ok(CbmaDataset {
            studies: studies.iter().map(|&s| self.studies[s].clone()).collect(),
            terms: self.terms.clone(),
            voxels: self.voxels.clone(),
            term_index: self.term_index.clone(),
            features,
            reported: studies.iter().map(|&s| self.reported[s].clone()).collect(),
        })
    }
}

#[derive(Default)]
struct IdList {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdList {
    fn id(&mut self, name: &str) -> u32 {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }
}

fn lookup_or_insert(list: &mut IdList, name: &str, fixed: bool) -> Option<u32> {
    if fixed {
        list.index.get(name).copied()
    } else {
        Some(list.id(name))
    }
}

/// Reads the named columns of a headed TSV file, returning (line, fields).
fn read_tsv(path: &Path, columns: &[&str]) -> Result<Vec<(usize, Vec<String>)>, CbmaError> {
    let text = std::fs::read_to_string(path).map_err(|source| CbmaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let malformed = |line: usize, message: String| CbmaError::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| malformed(1, "missing header row".into()))?;
    let names: Vec<&str> = header.split('\t').map(str::trim).collect();
    let positions = columns
        .iter()
        .map(|c| {
            names
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| malformed(1, format!("missing column `{c}` in header")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    for (line, l) in lines {
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != names.len() {
            return Err(malformed(
                line,
                format!("expected {} fields, found {}", names.len(), fields.len()),
            ));
        }
        out.push((line, positions.iter().map(|&p| fields[p].trim().to_string()).collect()));
    }
    Ok(out)
}

/// How TF-IDF values become term–study probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ThresholdConfig {
    /// `1[x > tau]`
    Hard { tau: f64 },
    /// `sigmoid(alpha (x - tau))`
    Soft { alpha: f64, tau: f64 },
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig::Soft {
            alpha: DEFAULT_ALPHA,
            tau: DEFAULT_TAU,
        }
    }
}

impl ThresholdConfig {
    pub fn hard(tau: f64) -> Result<Self, CbmaError> {
        ThresholdConfig::Hard { tau }.validated()
    }

    pub fn soft(alpha: f64, tau: f64) -> Result<Self, CbmaError> {
        ThresholdConfig::Soft { alpha, tau }.validated()
    }

    pub fn validated(self) -> Result<Self, CbmaError> {
        let tau = self.tau();
        if !tau.is_finite() || tau < 0.0 {
            return Err(CbmaError::InvalidConfig(format!("tau must be finite and >= 0, got {tau}")));
        }
        if let ThresholdConfig::Soft { alpha, .. } = self {
            if !alpha.is_finite() || alpha <= 0.0 {
                return Err(CbmaError::InvalidConfig(format!("alpha must be finite and > 0, got {alpha}")));
            }
        }
        Ok(self)
    }

    pub fn tau(&self) -> f64 {
        match *self {
            ThresholdConfig::Hard { tau } | ThresholdConfig::Soft { tau, .. } => tau,
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            ThresholdConfig::Hard { .. } => "hard",
            ThresholdConfig::Soft { .. } => "soft",
        }
    }

    /// Probability of `TermInStudy` for a stored TF-IDF value. Absent
    /// entries have probability 0 in both modes.
    pub fn probability(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match *self {
            ThresholdConfig::Hard { tau } => {
                if x > tau {
                    1.0
                } else {
                    0.0
                }
            }
            ThresholdConfig::Soft { alpha, tau } => omega(x, alpha, tau),
        }
    }
}

impl fmt::Display for ThresholdConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdConfig::Hard { tau } => write!(f, "hard(tau={tau})"),
            ThresholdConfig::Soft { alpha, tau } => write!(f, "soft(alpha={alpha}, tau={tau})"),
        }
    }
}

/// Soft threshold `sigmoid(alpha (x - tau))`.
pub fn omega(x: f64, alpha: f64, tau: f64) -> f64 {
    let z = alpha * (x - tau);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// The CBMA program: its two rules plus the extensional relations
/// `SelectedStudy` (equiprobable choice over studies), `VoxelReported`
/// (certain) and `TermInStudy` (thresholded TF-IDF, zero-probability
/// tuples omitted).
pub fn encode_program(
    ds: &CbmaDataset,
    cfg: &ThresholdConfig,
) -> Result<(ValidatedProgram, ProbDatabase), CbmaError> {
    let cfg = cfg.validated()?;
    let program = dsl::validate_program(dsl::parse_program(PROGRAM_RULES)?)
        .expect("built-in CBMA rules are valid");
    let mut db = ProbDatabase::new();
    let studies: Vec<Sym> = ds.studies.iter().map(|s| db.intern(s)).collect();
    let voxels: Vec<Sym> = ds.voxels.iter().map(|v| db.intern(v)).collect();
    let terms: Vec<Sym> = ds.terms.iter().map(|t| db.intern(t)).collect();

    db.insert(ProbRelation::make_equiprobable_choice(STUDY, &studies)?)?;

    let mut reported = Vec::with_capacity(2 * ds.activation_count());
    for (s, row) in ds.reported.iter().enumerate() {
        for &v in row {
            reported.push(voxels[v as usize]);
            reported.push(studies[s]);
        }
    }
    db.insert(ProbRelation::certain_unchecked(VOXEL_REPORTED, 2, reported))?;

    let mut data = Vec::new();
    let mut probs = Vec::new();
    for (t, col) in ds.features.iter().enumerate() {
        for &(s, x) in col {
            let p = cfg.probability(x);
            if p > 0.0 {
                data.push(terms[t]);
                data.push(studies[s as usize]);
                probs.push(p);
            }
        }
    }
    db.insert(ProbRelation::independent_unchecked(TERM_IN_STUDY, 2, data, probs))?;
    Ok((program, db))
}

/// `Activation(v) [| φ]` where φ is a Boolean formula over term names.
#[derive(Debug, Clone, PartialEq)]
pub struct TermQuery {
    pub variable: String,
    pub condition: Formula<String>,
}

impl TermQuery {
    pub fn new(condition: Formula<String>) -> Self {
        TermQuery {
            variable: "v".into(),
            condition,
        }
    }

    pub fn conjunction<S: AsRef<str>>(terms: &[S]) -> Self {
        Self::new(Formula::And(leaves(terms)))
    }

    pub fn disjunction<S: AsRef<str>>(terms: &[S]) -> Self {
        Self::new(Formula::Or(leaves(terms)))
    }

    /// The equivalent query over the encoded program. Positive conditions
    /// use `TermAssociation`; conditions with negation are stated on the
    /// selected study directly, since the program only allows negating
    /// probabilistic facts.
    pub fn to_query(&self) -> Query {
        let target = Atom::new(ACTIVATION, vec![Term::var(&self.variable)]);
        if self.condition == Formula::True {
            return Query::succ(target);
        }
        let condition = if self.condition.has_negation() {
            let s = if self.variable == "s" { "study" } else { "s" };
            Formula::And(vec![
                Formula::Leaf(Atom::new(STUDY, vec![Term::var(s)])),
                self.condition
                    .map_leaves(&mut |t| Atom::new(TERM_IN_STUDY, vec![Term::constant(t), Term::var(s)])),
            ])
        } else {
            self.condition
                .map_leaves(&mut |t| Atom::new(TERM_ASSOCIATION, vec![Term::constant(t)]))
        };
        Query::conditional(target, condition)
    }
}

impl fmt::Display for TermQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{ACTIVATION}({})", self.variable)?;
        if self.condition != Formula::True {
            write!(f, " | {}", self.condition)?;
        }
        Ok(())
    }
}

fn leaves<S: AsRef<str>>(terms: &[S]) -> Vec<Formula<String>> {
    terms.iter().map(|t| Formula::Leaf(t.as_ref().to_string())).collect()
}

/// Parses `Activation(v)` optionally followed by `| φ`, where φ combines
/// term names with `&`, `|`, `!` and parentheses.
pub fn parse_term_query(src: &str) -> Result<TermQuery, CbmaError> {
    let src = src.trim().trim_end_matches('.');
    let close = src
        .find(')')
        .ok_or_else(|| CbmaError::Query(format!("expected `{ACTIVATION}(v)`, found `{src}`")))?;
    let target = dsl::parse_query(&src[..=close])?.target;
    let variable = match (target.predicate.as_str(), target.args.as_slice()) {
        (ACTIVATION, [Term::Var(v)]) => v.clone(),
        _ => {
            return Err(CbmaError::Query(format!(
                "the target must be `{ACTIVATION}(<variable>)`, found `{target}`"
            )))
        }
    };
    let rest = src[close + 1..].trim();
    let condition = if rest.is_empty() {
        Formula::True
    } else if let Some(cond) = rest.strip_prefix('|') {
        dsl::parse_term_formula(cond)?
    } else {
        return Err(CbmaError::Query(format!("expected `|` after the target, found `{rest}`")));
    };
    Ok(TermQuery { variable, condition })
}

/// Per-study weights `P[φ holds for study i]`. Studies without any entry
/// for the formula's terms share `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyWeights {
    pub base: f64,
    /// (study, weight) for studies with an entry for some formula term
    pub touched: Vec<(u32, f64)>,
    pub n_studies: usize,
}

impl StudyWeights {
    pub fn dense(&self) -> Vec<f64> {
        let mut w = vec![self.base; self.n_studies];
        for &(s, x) in &self.touched {
            w[s as usize] = x;
        }
        w
    }
}

/// Computes the probability of the formula for every study, treating the
/// term–study probabilities as independent. Read-once formulas combine
/// with products and noisy-or; repeated terms are conditioned on exactly.
pub fn study_weights(
    ds: &CbmaDataset,
    cfg: &ThresholdConfig,
    formula: &Formula<String>,
) -> Result<StudyWeights, CbmaError> {
    let cfg = cfg.validated()?;
    let mut names: Vec<&String> = Vec::new();
    let mut occurrences: Vec<usize> = Vec::new();
    for leaf in formula.leaves() {
        match names.iter().position(|n| *n == leaf) {
            Some(i) => occurrences[i] += 1,
            None => {
                names.push(leaf);
                occurrences.push(1);
            }
        }
    }
    let columns: Vec<usize> = names
        .iter()
        .map(|n| ds.term_index(n).ok_or_else(|| CbmaError::UnknownTerm((*n).clone())))
        .collect::<Result<_, _>>()?;
    let repeated: Vec<usize> = (0..names.len()).filter(|&i| occurrences[i] > 1).collect();
    if repeated.len() > MAX_REPEATED_TERMS {
        return Err(CbmaError::TooManyRepeatedTerms { count: repeated.len() });
    }
    let indexed = formula.map_leaves(&mut |l| names.iter().position(|n| *n == l).expect("leaf is listed"));

    let d = names.len();
    let n = ds.n_studies();
    let mut probs = vec![0.0; n * d];
    let mut touched_flag = vec![false; n];
    let mut touched = Vec::new();
    for (j, &t) in columns.iter().enumerate() {
        for &(s, x) in ds.term_column(t) {
            let p = cfg.probability(x);
            probs[s as usize * d + j] = p;
            if !touched_flag[s as usize] {
                touched_flag[s as usize] = true;
                touched.push(s);
            }
        }
    }
    touched.sort_unstable();
    let mut scratch = vec![0.0; d];
    let base = formula_probability(&indexed, &vec![0.0; d], &repeated, &mut scratch);
    let touched = touched
        .into_iter()
        .map(|s| {
            let p = &probs[s as usize * d..(s as usize + 1) * d];
            (s, formula_probability(&indexed, p, &repeated, &mut scratch))
        })
        .collect();
    Ok(StudyWeights {
        base,
        touched,
        n_studies: n,
    })
}

/// Exact probability of a formula over independent leaves, conditioning on
/// every assignment of the repeated leaves.
fn formula_probability(f: &Formula<usize>, p: &[f64], repeated: &[usize], scratch: &mut [f64]) -> f64 {
    if repeated.is_empty() {
        return read_once(f, p);
    }
    scratch.copy_from_slice(p);
    let mut total = Neumaier::default();
    for mask in 0u64..(1u64 << repeated.len()) {
        let mut weight = 1.0;
        for (bit, &r) in repeated.iter().enumerate() {
            let on = mask >> bit & 1 == 1;
            weight *= if on { p[r] } else { 1.0 - p[r] };
            scratch[r] = if on { 1.0 } else { 0.0 };
        }
        if weight > 0.0 {
            total.add(weight * read_once(f, scratch));
        }
    }
    total.value()
}

fn read_once(f: &Formula<usize>, p: &[f64]) -> f64 {
    match f {
        Formula::True => 1.0,
        Formula::Leaf(i) => p[*i],
        Formula::Not(g) => 1.0 - read_once(g, p),
        Formula::And(gs) => gs.iter().map(|g| read_once(g, p)).product(),
        Formula::Or(gs) => 1.0 - gs.iter().map(|g| 1.0 - read_once(g, p)).product::<f64>(),
    }
}

/// Weighted sums behind a forward-inference map.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub n_studies: usize,
    /// `Σ_i w_i`
    pub total_weight: f64,
    /// `Σ_i w_i Y_ik` per voxel
    pub joint: Vec<f64>,
    /// studies reporting each voxel
    pub reported: Vec<u32>,
}

impl Estimate {
    /// `P[A_k | φ] = Σ w Y_k / Σ w`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.joint
            .iter()
            .map(|j| (j / self.total_weight).clamp(0.0, 1.0))
            .collect()
    }

    /// Weighted counts: activation of voxel `k` × match of the condition.
    pub fn contingency(&self, k: usize) -> ContingencyTable2x2 {
        let n = self.n_studies as f64;
        let w = self.total_weight;
        let c = f64::from(self.reported[k]);
        let n11 = self.joint[k];
        ContingencyTable2x2::new(
            n11,
            (c - n11).max(0.0),
            (w - n11).max(0.0),
            (n - w - c + n11).max(0.0),
        )
    }

    /// Per-voxel probabilities for voxels with a nonzero joint weight.
    pub fn to_table(&self, ds: &CbmaDataset) -> ProbTable {
        let rows = self
            .joint
            .iter()
            .enumerate()
            .filter(|(_, j)| **j > 0.0)
            .map(|(k, j)| (vec![ds.voxels[k].clone()], j / self.total_weight))
            .collect();
        ProbTable::new(vec!["v".into()], rows)
    }
}

/// Weighted sums for `P[Activation(v) | φ]`.
pub fn estimate(ds: &CbmaDataset, cfg: &ThresholdConfig, formula: &Formula<String>) -> Result<Estimate, CbmaError> {
    let weights = study_weights(ds, cfg, formula)?;
    let reported = ds.voxel_counts();
    let mut total = Neumaier::default();
    let mut joint = vec![Neumaier::default(); ds.n_voxels()];
    if weights.base != 0.0 {
        total.add(weights.base * ds.n_studies() as f64);
        for (acc, &c) in joint.iter_mut().zip(&reported) {
            acc.add(weights.base * f64::from(c));
        }
    }
    for &(s, w) in &weights.touched {
        let delta = w - weights.base;
        if delta == 0.0 {
            continue;
        }
        total.add(delta);
        for &v in ds.reported(s as usize) {
            joint[v as usize].add(delta);
        }
    }
    let total_weight = total.value();
    if total_weight < MIN_CONDITION {
        return Err(CbmaError::NoMatchingStudies { total_weight });
    }
    Ok(Estimate {
        n_studies: ds.n_studies(),
        total_weight,
        joint: joint.iter().map(|a| a.value().max(0.0)).collect(),
        reported,
    })
}

/// `P[A_k | T_1 ∧ … ∧ T_p]`.
pub fn estimate_conjunction<S: AsRef<str>>(
    ds: &CbmaDataset,
    cfg: &ThresholdConfig,
    terms: &[S],
) -> Result<ProbTable, CbmaError> {
    nonempty(terms)?;
    estimate_formula(ds, cfg, &TermQuery::conjunction(terms).condition)
}

/// `P[A_k | T_1 ∨ … ∨ T_p]`.
pub fn estimate_disjunction<S: AsRef<str>>(
    ds: &CbmaDataset,
    cfg: &ThresholdConfig,
    terms: &[S],
) -> Result<ProbTable, CbmaError> {
    nonempty(terms)?;
    estimate_formula(ds, cfg, &TermQuery::disjunction(terms).condition)
}

/// `P[A_k | φ]` for a Boolean term formula.
pub fn estimate_formula(
    ds: &CbmaDataset,
    cfg: &ThresholdConfig,
    formula: &Formula<String>,
) -> Result<ProbTable, CbmaError> {
    Ok(estimate(ds, cfg, formula)?.to_table(ds))
}

fn nonempty<S>(terms: &[S]) -> Result<(), CbmaError> {
    if terms.is_empty() {
        Err(CbmaError::Query("at least one term is required".into()))
    } else {
        Ok(())
    }
}

/// A thresholded forward-inference map.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardMap {
    pub probability: Vec<f64>,
    pub tests: Vec<GTest>,
    /// Bonferroni-corrected significance
    pub significant: Vec<bool>,
    /// significant with a positive association
    pub active: Vec<bool>,
}

impl ForwardMap {
    pub fn to_tsv(&self, ds: &CbmaDataset) -> String {
        let mut out = String::from("v\tp\tG\tp_value\tsignificant\n");
        let mut order: Vec<usize> = (0..ds.n_voxels()).collect();
        order.sort_by(|&a, &b| ds.voxels[a].cmp(&ds.voxels[b]));
        for k in order {
            let t = &self.tests[k];
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                ds.voxels[k], self.probability[k], t.g, t.p_value, self.active[k]
            );
        }
        out
    }
}

/// Tests each voxel for association with the condition and marks as active
/// those significant after Bonferroni correction at level `base` whose
/// association is positive.
pub fn forward_map(est: &Estimate, base: f64) -> ForwardMap {
    let tables: Vec<ContingencyTable2x2> = (0..est.joint.len()).map(|k| est.contingency(k)).collect();
    let tests: Vec<GTest> = tables
        .iter()
        .map(|t| {
            g_test(t).unwrap_or(GTest {
                g: 0.0,
                p_value: 1.0,
                degenerate: true,
            })
        })
        .collect();
    let p_values: Vec<f64> = tests.iter().map(|t| t.p_value).collect();
    let significant = bonferroni_threshold(&p_values, base).unwrap_or_default();
    let active = significant
        .iter()
        .zip(&tables)
        .map(|(s, t)| *s && t.positive_association())
        .collect();
    ForwardMap {
        probability: est.probabilities(),
        tests,
        significant,
        active,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> CbmaDataset {
        // three studies: weights 0.9*0.8, 0.5*0.5, 0.1*0.2 under soft mode
        CbmaDataset::from_records(
            &[
                ("s1", "a", 0.9),
                ("s1", "b", 0.8),
                ("s2", "a", 0.5),
                ("s2", "b", 0.5),
                ("s3", "a", 0.1),
                ("s3", "b", 0.2),
            ],
            &[("s1", "v1"), ("s3", "v1"), ("s2", "v2")],
        )
        .unwrap()
    }

    /// Identity threshold: probabilities equal raw values (for hand fixtures).
    fn literal_weights(ds: &CbmaDataset, f: &Formula<String>) -> Vec<f64> {
        let idx = f.map_leaves(&mut |t| ds.term_index(t).unwrap());
        (0..ds.n_studies())
            .map(|s| {
                let p: Vec<f64> = (0..ds.n_terms()).map(|t| ds.tfidf(s, t)).collect();
                read_once(&idx, &p)
            })
            .collect()
    }

    #[test]
    fn omega_values() {
        assert_eq!(omega(0.1, 300.0, 0.1), 0.5);
        assert!(omega(0.2, 1e6, 0.1) > 1.0 - 1e-9);
        assert!((omega(0.11, 300.0, 0.1) - 0.952_574_126_822_433_4).abs() < 1e-12);
        assert!(omega(-10.0, 1e6, 0.1) >= 0.0);
    }

    #[test]
    fn soft_weight_arithmetic() {
        let ds = fixture();
        let f = TermQuery::conjunction(&["a", "b"]).condition;
        let w = literal_weights(&ds, &f);
        let y1 = [1.0, 0.0, 1.0];
        let num: f64 = w.iter().zip(y1).map(|(w, y)| w * y).sum();
        let den: f64 = w.iter().sum();
        assert!((num / den - 0.74 / 0.99).abs() < 1e-12);
    }

    #[test]
    fn threshold_probabilities() {
        let hard = ThresholdConfig::hard(0.1).unwrap();
        assert_eq!(hard.probability(0.05), 0.0);
        assert_eq!(hard.probability(0.2), 1.0);
        assert_eq!(hard.probability(0.1), 0.0);
        let soft = ThresholdConfig::soft(300.0, 0.1).unwrap();
        assert_eq!(soft.probability(0.1), 0.5);
        assert_eq!(soft.probability(0.0), 0.0);
        assert!(ThresholdConfig::soft(0.0, 0.1).is_err());
        assert!(ThresholdConfig::hard(-1.0).is_err());
    }

    #[test]
    fn encoding_omits_zero_probability_tuples() {
        let ds = CbmaDataset::from_records(&[("s1", "a", 0.05), ("s2", "a", 0.2)], &[("s1", "v")]).unwrap();
        let (_, db) = encode_program(&ds, &ThresholdConfig::hard(0.1).unwrap()).unwrap();
        let tis = db.relation(TERM_IN_STUDY).unwrap();
        assert_eq!(tis.len(), 1);
        assert_eq!(tis.prob(0), 1.0);
        let ss = db.relation(STUDY).unwrap();
        assert_eq!(ss.len(), 2);
        assert!((ss.total_mass() - 1.0).abs() < 1e-12);
        let (_, db) = encode_program(&ds, &ThresholdConfig::soft(300.0, 0.05).unwrap()).unwrap();
        let tis = db.relation(TERM_IN_STUDY).unwrap();
        assert_eq!(tis.len(), 2);
        assert!(tis.iter().any(|(_, p)| p == 0.5));
    }

    #[test]
    fn two_equal_weights_give_one_half() {
        let ds = CbmaDataset::from_records(&[("s1", "a", 0.5), ("s2", "a", 0.5)], &[("s1", "v")]).unwrap();
        let t = estimate_conjunction(&ds, &ThresholdConfig::hard(0.1).unwrap(), &["a"]).unwrap();
        assert_eq!(t.get(&["v"]), 0.5);
    }

    #[test]
    fn hard_conjunction_uses_min_rule() {
        let ds = fixture();
        let cfg = ThresholdConfig::hard(0.15).unwrap();
        // studies with min(a, b) > 0.15: s1, s2
        let t = estimate_conjunction(&ds, &cfg, &["a", "b"]).unwrap();
        assert_eq!(t.get(&["v1"]), 0.5);
        assert_eq!(t.get(&["v2"]), 0.5);
        // disjunction uses max: all three studies
        let t = estimate_disjunction(&ds, &cfg, &["a", "b"]).unwrap();
        assert!((t.get(&["v1"]) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn disjunction_noisy_or_weight() {
        let ds = CbmaDataset::from_records(&[("s1", "a", 0.1), ("s1", "b", 0.1)], &[("s1", "v")]).unwrap();
        let cfg = ThresholdConfig::soft(300.0, 0.1).unwrap();
        let w = study_weights(&ds, &cfg, &TermQuery::disjunction(&["a", "b"]).condition).unwrap();
        assert_eq!(w.touched, vec![(0, 0.75)]);
    }

    #[test]
    fn single_term_disjunction_equals_conjunction() {
        let ds = fixture();
        let cfg = ThresholdConfig::default();
        let a = estimate_conjunction(&ds, &cfg, &["a"]).unwrap();
        let b = estimate_disjunction(&ds, &cfg, &["a"]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn repeated_terms_are_exact() {
        let ds = fixture();
        let cfg = ThresholdConfig::soft(5.0, 0.5).unwrap();
        // a & (a | b) is equivalent to a
        let f = dsl::parse_term_formula("a & (a | b)").unwrap();
        let w = study_weights(&ds, &cfg, &f).unwrap().dense();
        let a = study_weights(&ds, &cfg, &Formula::Leaf("a".into())).unwrap().dense();
        for (x, y) in w.iter().zip(&a) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn negation_weights_cover_untouched_studies() {
        let ds = CbmaDataset::from_records(
            &[("s1", "a", 0.5), ("s2", "b", 0.5)],
            &[("s1", "v"), ("s2", "v"), ("s3", "v"), ("s3", "w")],
        )
        .unwrap();
        let cfg = ThresholdConfig::hard(0.1).unwrap();
        let f = dsl::parse_term_formula("!a").unwrap();
        let est = estimate(&ds, &cfg, &f).unwrap();
        assert_eq!(est.total_weight, 2.0);
        assert_eq!(est.probabilities(), vec![1.0, 0.5]);
    }

    #[test]
    fn blended_formula_by_hand() {
        let ds = CbmaDataset::from_records(
            &[
                ("s1", "t1", 0.3),
                ("s1", "t2", 0.6),
                ("s1", "t3", 0.2),
                ("s1", "t4", 0.5),
                ("s2", "t1", 0.9),
                ("s2", "t3", 0.4),
            ],
            &[("s1", "v")],
        )
        .unwrap();
        let f = dsl::parse_term_formula("(t1 | t2) & (t3 | t4)").unwrap();
        let w = literal_weights(&ds, &f);
        // s1: (1 - 0.7*0.4)(1 - 0.8*0.5) = 0.72*0.6; s2: 0.9*0.4
        let w1 = 0.72 * 0.6;
        let w2 = 0.9 * 0.4;
        assert!((w[0] - w1).abs() < 1e-15 && (w[1] - w2).abs() < 1e-15);
        assert!((w[0] / (w[0] + w[1]) - w1 / (w1 + w2)).abs() < 1e-15);
    }

    #[test]
    fn no_matching_studies() {
        let ds = fixture();
        let err = estimate_conjunction(&ds, &ThresholdConfig::hard(5.0).unwrap(), &["a"]).unwrap_err();
        assert!(matches!(err, CbmaError::NoMatchingStudies { .. }));
        assert!(matches!(
            estimate_conjunction(&ds, &ThresholdConfig::default(), &["zzz"]),
            Err(CbmaError::UnknownTerm(_))
        ));
    }

    #[test]
    fn contingency_counts() {
        let ds = fixture();
        let est = estimate(&ds, &ThresholdConfig::hard(0.15).unwrap(), &TermQuery::conjunction(&["a", "b"]).condition)
            .unwrap();
        let v1 = ds.voxels().iter().position(|v| v == "v1").unwrap();
        let t = est.contingency(v1);
        // matched: s1, s2; v1 reported by s1, s3
        assert_eq!((t.n11, t.n10, t.n01, t.n00), (1.0, 1.0, 1.0, 0.0));
        assert!((t.total() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn forward_map_flags_strong_association() {
        let mut features = Vec::new();
        let mut activations = Vec::new();
        for i in 0..200 {
            let s = format!("s{i}");
            if i < 100 {
                features.push((s.clone(), "a".to_string(), 0.5));
                activations.push((s.clone(), "hot".to_string()));
            }
            if i % 2 == 0 {
                activations.push((s.clone(), "noise".to_string()));
            }
        }
        let ds = CbmaDataset::from_records(&features, &activations).unwrap();
        let est = estimate(&ds, &ThresholdConfig::default(), &Formula::Leaf("a".into())).unwrap();
        let map = forward_map(&est, DEFAULT_SIGNIFICANCE);
        let hot = ds.voxels().iter().position(|v| v == "hot").unwrap();
        let noise = ds.voxels().iter().position(|v| v == "noise").unwrap();
        assert!(map.active[hot]);
        assert!(!map.active[noise]);
        assert!(map.to_tsv(&ds).starts_with("v\tp\tG\tp_value\tsignificant\n"));
    }

    #[test]
    fn term_query_parsing() {
        let q = parse_term_query("Activation(v) | insula & speech").unwrap();
        assert_eq!(q, TermQuery::conjunction(&["insula", "speech"]));
        assert_eq!(
            q.to_query().to_string(),
            "Activation(v) | TermAssociation(\"insula\") & TermAssociation(\"speech\")"
        );
        let q = parse_term_query("Activation(x)").unwrap();
        assert_eq!(q.condition, Formula::True);
        assert!(q.to_query().condition.is_none());
        let q = parse_term_query("Activation(v) | a & !b").unwrap();
        assert!(q.to_query().to_string().contains("TermInStudy(\"b\", s)"));
        assert!(parse_term_query("Foo(v) | a").is_err());
        assert!(parse_term_query("Activation(v) a").is_err());
    }

    #[test]
    fn subset_keeps_terms_and_voxels() {
        let ds = fixture();
        let sub = ds.subset(&[2, 0]).unwrap();
        assert_eq!(sub.studies(), &["s3".to_string(), "s1".to_string()]);
        assert_eq!(sub.n_voxels(), ds.n_voxels());
        assert_eq!(sub.tfidf(0, 0), 0.1);
        assert!(sub.is_reported(1, 0));
        assert!(ds.subset(&[0, 0]).is_err());
    }

    #[test]
    fn write_and_load_round_trip() {
        let ds = fixture();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let back = CbmaDataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
        std::fs::write(dir.path().join("features.tsv"), "study_id\tterm\ttfidf\ns1\ta\tx\n").unwrap();
        let err = CbmaDataset::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(CbmaDataset::from_records(&[("s", "a", -1.0)], &[("s", "v")]).is_err());
        assert!(CbmaDataset::from_records(&[("s", "a", f64::NAN)], &[("s", "v")]).is_err());
        assert!(CbmaDataset::from_records(&[("s", "a", 0.1), ("s", "a", 0.2)], &[("s", "v")]).is_err());
    }
}
