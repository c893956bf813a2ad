//! Benchmarks comparing hard and soft thresholding: F1 against simulated
//! ground truth, and consistency of thresholded maps across sub-samples.

use std::fmt::Write as _;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbma::{
    estimate, forward_map, CbmaDataset, CbmaError, TermQuery, ThresholdConfig, DEFAULT_ALPHA, DEFAULT_SIGNIFICANCE,
    DEFAULT_TAU,
};
use crate::sim::{generate, stream_rng, GenConfig, SimError};
use crate::stats::{consistency, f1_score};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "PROBCBMA_THREADS";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Cbma(#[from] CbmaError),
}

/// Sizes the global worker pool from `threads` or `PROBCBMA_THREADS`.
/// Returns the number of workers in use.
pub fn init_thread_pool(threads: Option<usize>) -> usize {
    let requested = threads.or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()));
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = requested.filter(|&n| n > 0) {
            // an already initialized pool keeps its size
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = requested;
        1
    }
}

#[cfg(feature = "parallel")]
fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Hard,
    Soft,
}

impl Mode {
    pub const BOTH: [Mode; 2] = [Mode::Hard, Mode::Soft];

    pub fn config(self, alpha: f64, tau: f64) -> ThresholdConfig {
        match self {
            Mode::Hard => ThresholdConfig::Hard { tau },
            Mode::Soft => ThresholdConfig::Soft { alpha, tau },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Hard => "hard",
            Mode::Soft => "soft",
        }
    }
}

/// Median and quartiles (linear interpolation between order statistics).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Distribution {
    pub count: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Self {
        let mut v: Vec<f64> = values.to_vec();
        v.sort_by(f64::total_cmp);
        let quantile = |q: f64| -> f64 {
            if v.is_empty() {
                return f64::NAN;
            }
            let pos = q * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Distribution {
            count: v.len(),
            mean: if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 },
            q1: quantile(0.25),
            median: quantile(0.5),
            q3: quantile(0.75),
        }
    }
}

/// The `count` terms present above `tau` in the most studies, ties broken
/// by term order.
pub fn top_terms(ds: &CbmaDataset, tau: f64, count: usize) -> Vec<String> {
    let mut df: Vec<(usize, usize)> = (0..ds.n_terms())
        .map(|t| (ds.term_column(t).iter().filter(|(_, x)| *x > tau).count(), t))
        .collect();
    df.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    df.into_iter().take(count).map(|(_, t)| ds.terms()[t].clone()).collect()
}

/// All unordered pairs, in order.
pub fn term_pairs(terms: &[String]) -> Vec<[String; 2]> {
    let mut out = Vec::new();
    for i in 0..terms.len() {
        for j in i + 1..terms.len() {
            out.push([terms[i].clone(), terms[j].clone()]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct F1BenchConfig {
    pub sample_sizes: Vec<usize>,
    pub repeats: usize,
    /// Query terms; defaults to the `n_query_terms` most frequent.
    pub terms: Option<Vec<String>>,
    pub n_query_terms: usize,
    /// Cap on the number of term pairs (all pairs when absent).
    pub max_queries: Option<usize>,
    pub alpha: f64,
    pub tau: f64,
    pub significance: f64,
    pub seed: u64,
}

impl Default for F1BenchConfig {
    fn default() -> Self {
        F1BenchConfig {
            sample_sizes: vec![150, 500, 1500, 5000],
            repeats: 10,
            terms: None,
            n_query_terms: 11,
            max_queries: None,
            alpha: DEFAULT_ALPHA,
            tau: DEFAULT_TAU,
            significance: DEFAULT_SIGNIFICANCE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct F1Row {
    pub query: String,
    pub size: usize,
    pub repeat: usize,
    pub mode: Mode,
    pub f1: f64,
    pub predicted: usize,
    /// Why the cell was scored 0 without an estimate.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub size: usize,
    pub mode: Mode,
    pub distribution: Distribution,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct F1Results {
    pub queries: Vec<String>,
    pub rows: Vec<F1Row>,
    pub summary: Vec<CellSummary>,
}

impl F1Results {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("query\tsize\trepeat\tmode\tf1\tpredicted\tskipped\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.query,
                r.size,
                r.repeat,
                r.mode.name(),
                r.f1,
                r.predicted,
                r.skipped.as_deref().unwrap_or("")
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({
            "queries": self.queries,
            "summary": self.summary,
        }))
        .expect("summary serializes")
    }

    pub fn median(&self, size: usize, mode: Mode) -> Option<f64> {
        self.summary
            .iter()
            .find(|c| c.size == size && c.mode == mode)
            .map(|c| c.distribution.median)
    }
}

fn summarize<R>(rows: &[R], sizes: &[usize], key: impl Fn(&R) -> (usize, Mode, f64, bool)) -> Vec<CellSummary> {
    let mut out = Vec::new();
    for &size in sizes {
        for mode in Mode::BOTH {
            let cells: Vec<(f64, bool)> = rows
                .iter()
                .map(&key)
                .filter(|k| k.0 == size && k.1 == mode)
                .map(|k| (k.2, k.3))
                .collect();
            let values: Vec<f64> = cells.iter().map(|c| c.0).collect();
            out.push(CellSummary {
                size,
                mode,
                distribution: Distribution::of(&values),
                skipped: cells.iter().filter(|c| c.1).count(),
            });
        }
    }
    out
}

fn cell_stream(query: usize, size_index: usize, repeat: usize) -> u64 {
    ((query as u64) << 32) | ((size_index as u64) << 20) | repeat as u64
}

/// Thresholded forward map for a term formula, or the reason none exists.
fn predict(ds: &CbmaDataset, cfg: &ThresholdConfig, query: &TermQuery, base: f64) -> Result<Vec<bool>, String> {
    match estimate(ds, cfg, &query.condition) {
        Ok(est) => Ok(forward_map(&est, base).active),
        Err(CbmaError::NoMatchingStudies { .. }) => Err("no matching studies".into()),
        Err(e) => Err(e.to_string()),
    }
}

/// For every term pair, simulates a dataset whose truth is linked to that
/// pair, then scores hard and soft forward maps on random sub-samples.
pub fn run_f1_benchmark(gen: &GenConfig, bench: &F1BenchConfig) -> Result<F1Results, BenchError> {
    let max_size = *bench
        .sample_sizes
        .iter()
        .max()
        .ok_or_else(|| BenchError::InvalidConfig("no sample sizes".into()))?;
    if bench.repeats == 0 || bench.sample_sizes.contains(&0) {
        return Err(BenchError::InvalidConfig("repeats and sample sizes must be positive".into()));
    }
    let base_cfg = GenConfig {
        n_studies: gen.n_studies.max(max_size),
        ..gen.clone()
    };
    let probe = generate(&base_cfg)?;
    let terms = match &bench.terms {
        Some(t) => t.clone(),
        None => top_terms(&probe.dataset, bench.tau, bench.n_query_terms),
    };
    let mut pairs = term_pairs(&terms);
    if let Some(cap) = bench.max_queries {
        pairs.truncate(cap);
    }
    let mut rows = Vec::new();
    let mut queries = Vec::new();
    for (qi, pair) in pairs.iter().enumerate() {
        let index = |t: &str| {
            probe
                .dataset
                .term_index(t)
                .ok_or_else(|| BenchError::Cbma(CbmaError::UnknownTerm(t.to_string())))
        };
        let cfg = GenConfig {
            query: [index(&pair[0])?, index(&pair[1])?],
            ..base_cfg.clone()
        };
        let sim = generate(&cfg)?;
        let query = TermQuery::conjunction(pair);
        let label = format!("{}&{}", pair[0], pair[1]);
        queries.push(label.clone());
        let cells: Vec<(usize, usize, usize)> = bench
            .sample_sizes
            .iter()
            .enumerate()
            .flat_map(|(si, &size)| (0..bench.repeats).map(move |r| (si, size, r)))
            .collect();
        let scored = par_map(&cells, |&(si, size, repeat)| -> Result<Vec<F1Row>, BenchError> {
            let mut rng = stream_rng(bench.seed, cell_stream(qi, si, repeat));
            let n = sim.dataset.n_studies();
            let mut picked = sample(&mut rng, n, size.min(n)).into_vec();
            picked.sort_unstable();
            let sub = sim.dataset.subset(&picked)?;
            let mut out = Vec::new();
            for mode in Mode::BOTH {
                let cfg = mode.config(bench.alpha, bench.tau);
                let (f1, predicted, skipped) = match predict(&sub, &cfg, &query, bench.significance) {
                    Ok(active) => (
                        f1_score(&active, &sim.truth).expect("equal lengths"),
                        active.iter().filter(|a| **a).count(),
                        None,
                    ),
                    Err(reason) => (0.0, 0, Some(reason)),
                };
                out.push(F1Row {
                    query: label.clone(),
                    size,
                    repeat,
                    mode,
                    f1,
                    predicted,
                    skipped,
                });
            }
            Ok(out)
        });
        for r in scored {
            rows.extend(r?);
        }
    }
    let summary = summarize(&rows, &bench.sample_sizes, |r| (r.size, r.mode, r.f1, r.skipped.is_some()));
    Ok(F1Results { queries, rows, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyBenchConfig {
    pub sample_sizes: Vec<usize>,
    /// Sub-samples per (query, size).
    pub subsamples: usize,
    pub terms: Option<Vec<String>>,
    pub n_query_terms: usize,
    pub max_queries: Option<usize>,
    pub alpha: f64,
    pub tau: f64,
    pub significance: f64,
    pub seed: u64,
}

impl Default for ConsistencyBenchConfig {
    fn default() -> Self {
        ConsistencyBenchConfig {
            sample_sizes: vec![150, 500, 1500, 5000],
            subsamples: 50,
            terms: None,
            n_query_terms: 11,
            max_queries: None,
            alpha: DEFAULT_ALPHA,
            tau: DEFAULT_TAU,
            significance: DEFAULT_SIGNIFICANCE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyRow {
    pub query: String,
    pub size: usize,
    pub mode: Mode,
    pub consistency: f64,
    /// Sub-samples without matching studies (scored as empty maps).
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyResults {
    pub queries: Vec<String>,
    pub rows: Vec<ConsistencyRow>,
    pub summary: Vec<CellSummary>,
}

impl ConsistencyResults {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("query\tsize\tmode\tconsistency\tskipped\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.query,
                r.size,
                r.mode.name(),
                r.consistency,
                r.skipped
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({
            "queries": self.queries,
            "summary": self.summary,
        }))
        .expect("summary serializes")
    }
}

/// Consistency of hard and soft maps over random sub-samples of `ds`.
pub fn run_consistency_benchmark(
    ds: &CbmaDataset,
    bench: &ConsistencyBenchConfig,
) -> Result<ConsistencyResults, BenchError> {
    if bench.subsamples == 0 || bench.sample_sizes.is_empty() || bench.sample_sizes.contains(&0) {
        return Err(BenchError::InvalidConfig(
            "subsamples and sample sizes must be positive".into(),
        ));
    }
    if let Some(&s) = bench.sample_sizes.iter().find(|&&s| s > ds.n_studies()) {
        return Err(BenchError::InvalidConfig(format!(
            "sample size {s} exceeds the {} studies of the dataset",
            ds.n_studies()
        )));
    }
    let terms = match &bench.terms {
        Some(t) => t.clone(),
        None => top_terms(ds, bench.tau, bench.n_query_terms),
    };
    for t in &terms {
        ds.term_index(t).ok_or_else(|| CbmaError::UnknownTerm(t.clone()))?;
    }
    let mut pairs = term_pairs(&terms);
    if let Some(cap) = bench.max_queries {
        pairs.truncate(cap);
    }
    let cells: Vec<(usize, usize, Mode)> = (0..pairs.len())
        .flat_map(|q| {
            (0..bench.sample_sizes.len()).flat_map(move |s| Mode::BOTH.into_iter().map(move |m| (q, s, m)))
        })
        .collect();
    let rows = par_map(&cells, |&(qi, si, mode)| -> Result<ConsistencyRow, BenchError> {
        let size = bench.sample_sizes[si];
        let query = TermQuery::conjunction(&pairs[qi]);
        let cfg = mode.config(bench.alpha, bench.tau);
        let mut maps = Vec::with_capacity(bench.subsamples);
        let mut skipped = 0;
        for m in 0..bench.subsamples {
            // the same sub-samples for both modes
            let mut rng = stream_rng(bench.seed, cell_stream(qi, si, m));
            let mut picked = sample(&mut rng, ds.n_studies(), size).into_vec();
            picked.sort_unstable();
            let sub = ds.subset(&picked)?;
            match predict(&sub, &cfg, &query, bench.significance) {
                Ok(active) => maps.push(active),
                Err(_) => {
                    skipped += 1;
                    maps.push(vec![false; ds.n_voxels()]);
                }
            }
        }
        Ok(ConsistencyRow {
            query: format!("{}&{}", pairs[qi][0], pairs[qi][1]),
            size,
            mode,
            consistency: consistency(&maps).expect("nonempty maps"),
            skipped,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&rows, &bench.sample_sizes, |r| (r.size, r.mode, r.consistency, r.skipped > 0));
    Ok(ConsistencyResults {
        queries: pairs.iter().map(|p| format!("{}&{}", p[0], p[1])).collect(),
        rows,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_gen() -> GenConfig {
        GenConfig {
            n_studies: 300,
            n_terms: 4,
            n_voxels: 60,
            ..GenConfig::default()
        }
    }

    #[test]
    fn distribution_quartiles() {
        let d = Distribution::of(&[4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!((d.q1, d.median, d.q3, d.mean), (2.0, 3.0, 4.0, 3.0));
        assert_eq!(Distribution::of(&[1.0, 2.0]).median, 1.5);
    }

    #[test]
    fn pairs_of_eleven_terms() {
        let terms: Vec<String> = (0..11).map(|i| format!("t{i}")).collect();
        assert_eq!(term_pairs(&terms).len(), 55);
    }

    #[test]
    fn f1_benchmark_shape_and_determinism() {
        let bench = F1BenchConfig {
            sample_sizes: vec![100, 300],
            repeats: 2,
            n_query_terms: 3,
            ..F1BenchConfig::default()
        };
        let a = run_f1_benchmark(&tiny_gen(), &bench).unwrap();
        assert_eq!(a.queries.len(), 3);
        assert_eq!(a.rows.len(), 3 * 2 * 2 * 2);
        assert_eq!(a.summary.len(), 4);
        assert!(a.rows.iter().all(|r| (0.0..=1.0).contains(&r.f1)));
        let b = run_f1_benchmark(&tiny_gen(), &bench).unwrap();
        assert_eq!(a, b);
        assert!(a.to_tsv().lines().count() == a.rows.len() + 1);
        assert!(a.to_json().contains("\"median\""));
    }

    #[test]
    fn full_sample_single_repeat() {
        let bench = F1BenchConfig {
            sample_sizes: vec![300],
            repeats: 1,
            n_query_terms: 2,
            ..F1BenchConfig::default()
        };
        let r = run_f1_benchmark(&tiny_gen(), &bench).unwrap();
        assert_eq!(r.rows.len(), 2);
    }

    #[test]
    fn consistency_with_one_subsample_is_one() {
        let sim = generate(&tiny_gen()).unwrap();
        let bench = ConsistencyBenchConfig {
            sample_sizes: vec![100],
            subsamples: 1,
            n_query_terms: 3,
            ..ConsistencyBenchConfig::default()
        };
        let r = run_consistency_benchmark(&sim.dataset, &bench).unwrap();
        assert_eq!(r.rows.len(), 3 * 2);
        assert!(r.rows.iter().all(|row| row.consistency == 1.0));
    }

    #[test]
    fn full_size_subsamples_are_identical() {
        let sim = generate(&tiny_gen()).unwrap();
        let bench = ConsistencyBenchConfig {
            sample_sizes: vec![300],
            subsamples: 4,
            n_query_terms: 2,
            ..ConsistencyBenchConfig::default()
        };
        let r = run_consistency_benchmark(&sim.dataset, &bench).unwrap();
        assert!(r.rows.iter().all(|row| row.consistency == 1.0));
        assert!(run_consistency_benchmark(
            &sim.dataset,
            &ConsistencyBenchConfig {
                sample_sizes: vec![301],
                ..bench
            }
        )
        .is_err());
    }
}
