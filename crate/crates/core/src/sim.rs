//! Synthetic CBMA databases with known query-linked voxels.
//!
//! Term frequencies are logistic-normal, TF-IDF weights use document
//! frequencies of the simulated corpus, and each voxel activates with
//! probability `sigmoid(b_k + beta_k · x_i + gamma_k z_i)` where `z_i` says
//! whether study `i` is about both query terms. Voxel parameters are drawn
//! by rejection so that exactly `round(active_fraction · K)` voxels are
//! query-linked.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbma::{omega, CbmaDataset, CbmaError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("covariance matrix is not positive semi-definite (pivot {pivot} = {value})")]
    NotPsd { pivot: usize, value: f64 },
    #[error("voxel {voxel}: no acceptable parameters after {draws} draws")]
    RejectionBudgetExceeded { voxel: usize, draws: usize },
    #[error("cannot read configuration {path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Dataset(#[from] CbmaError),
}

/// When a simulated study counts as being about both query terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MatchRule {
    /// Each term is present in a study with probability `omega(x)`,
    /// independently; the study matches when both are present.
    #[default]
    Latent,
    /// The study matches when `omega(x) > 0.5` for both terms.
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_studies: usize,
    pub n_terms: usize,
    pub n_voxels: usize,
    /// Fraction of voxels linked to the query.
    pub active_fraction: f64,
    /// Logit means; defaults to evenly spaced values in `[mean_high, mean_low]`.
    pub mu: Option<Vec<f64>>,
    /// Logit covariance; defaults to a block matrix over `term_groups`.
    pub sigma: Option<Vec<Vec<f64>>>,
    pub mean_high: f64,
    pub mean_low: f64,
    /// Logit of an extra softmax component standing for the rest of the
    /// vocabulary; it occurs in every study, so its IDF is 0 and it is not
    /// part of the dataset.
    pub background_logit: Option<f64>,
    pub term_groups: usize,
    pub variance: f64,
    /// Correlation between terms of the same group.
    pub group_correlation: f64,
    pub tau: f64,
    pub alpha: f64,
    /// Indices of the two query terms.
    pub query: [usize; 2],
    pub seed: u64,
    /// Mean probability that a study reports a given voxel.
    pub base_rate: f64,
    /// Standard deviation of the per-voxel TF-IDF coefficients.
    pub background_scale: f64,
    /// Range of the logit increase for query-linked voxels.
    pub lift_logit: [f64; 2],
    /// Probability increase separating query-linked voxels from the rest.
    pub min_lift: f64,
    pub match_rule: MatchRule,
    /// Rejection budget per voxel.
    pub max_draws: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_studies: 5000,
            n_terms: 11,
            n_voxels: 1000,
            active_fraction: 0.05,
            mu: None,
            sigma: None,
            mean_high: 1.0,
            mean_low: 0.0,
            background_logit: Some(0.0),
            term_groups: 3,
            variance: 9.0,
            group_correlation: 0.5,
            tau: 0.1,
            alpha: 300.0,
            query: [0, 1],
            seed: 0,
            base_rate: 0.03,
            background_scale: 2.0,
            lift_logit: [2.0, 3.5],
            min_lift: 0.1,
            match_rule: MatchRule::Latent,
            max_draws: 1000,
        }
    }
}

impl GenConfig {
    /// Reads a TOML file; missing keys take their defaults.
    pub fn from_toml_file(path: &Path) -> Result<Self, SimError> {
        let config_err = |message: String| SimError::Config {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| config_err(e.to_string()))?;
        toml::from_str(&text).map_err(|e| config_err(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.n_studies == 0 || self.n_terms == 0 || self.n_voxels == 0 {
            return bad("n_studies, n_terms and n_voxels must be positive".into());
        }
        if !(self.active_fraction > 0.0 && self.active_fraction < 1.0) {
            return bad(format!("active_fraction must lie in (0, 1), got {}", self.active_fraction));
        }
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return bad(format!("base_rate must lie in (0, 1), got {}", self.base_rate));
        }
        if self.query[0] >= self.n_terms || self.query[1] >= self.n_terms || self.query[0] == self.query[1] {
            return bad(format!("query {:?} must name two distinct terms below {}", self.query, self.n_terms));
        }
        if !(self.alpha > 0.0) || !(self.tau >= 0.0) {
            return bad("alpha must be > 0 and tau >= 0".into());
        }
        if self.lift_logit[0] > self.lift_logit[1] || self.lift_logit[0] < 0.0 {
            return bad("lift_logit must be an increasing pair of nonnegative values".into());
        }
        if self.term_groups == 0 {
            return bad("term_groups must be positive".into());
        }
        if let Some(mu) = &self.mu {
            if mu.len() != self.n_terms {
                return bad(format!("mu has length {}, expected {}", mu.len(), self.n_terms));
            }
        }
        if let Some(s) = &self.sigma {
            if s.len() != self.n_terms || s.iter().any(|r| r.len() != self.n_terms) {
                return bad(format!("sigma must be {0}x{0}", self.n_terms));
            }
            for i in 0..self.n_terms {
                for j in 0..i {
                    if (s[i][j] - s[j][i]).abs() > 1e-12 {
                        return bad("sigma must be symmetric".into());
                    }
                }
            }
        }
        Ok(())
    }

    pub fn mean_vector(&self) -> Vec<f64> {
        if let Some(mu) = &self.mu {
            return mu.clone();
        }
        let m = self.n_terms;
        if m == 1 {
            return vec![self.mean_high];
        }
        (0..m)
            .map(|j| self.mean_high + (self.mean_low - self.mean_high) * j as f64 / (m - 1) as f64)
            .collect()
    }

    /// Terms are assigned to groups round-robin so that consecutive terms
    /// fall in different groups.
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        if let Some(s) = &self.sigma {
            return s.clone();
        }
        let m = self.n_terms;
        let mut s = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 0..m {
                s[i][j] = if i == j {
                    self.variance
                } else if i % self.term_groups == j % self.term_groups {
                    self.group_correlation * self.variance
                } else {
                    0.0
                };
            }
        }
        s
    }

    pub fn term_names(&self) -> Vec<String> {
        let width = self.n_terms.to_string().len().max(2);
        (1..=self.n_terms).map(|j| format!("term{j:0width$}")).collect()
    }
}

/// A generated dataset and the voxels linked to its query.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub dataset: CbmaDataset,
    pub truth: Vec<bool>,
    pub query: [String; 2],
}

impl SimulatedDataset {
    /// Writes the dataset files plus `truth.tsv` (voxel_id, truth).
    pub fn write(&self, dir: &Path) -> Result<(), SimError> {
        self.dataset.write(dir)?;
        let mut out = String::from("voxel_id\ttruth\n");
        for (v, t) in self.dataset.voxels().iter().zip(&self.truth) {
            let _ = writeln!(out, "{v}\t{}", u8::from(*t));
        }
        let path = dir.join("truth.tsv");
        std::fs::write(&path, out).map_err(|source| CbmaError::Io { path, source })?;
        Ok(())
    }
}

const STREAM_TF: u64 = 1 << 40;
const STREAM_MATCH: u64 = 2 << 40;
const STREAM_VOXEL: u64 = 3 << 40;
const STREAM_TRUTH: u64 = 4 << 40;

/// Independent generator for one (phase, index) pair of a seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Lower-triangular `L` with `L Lᵀ = S`, allowing zero pivots for
/// semi-definite matrices.
pub fn cholesky(s: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, SimError> {
    let m = s.len();
    let scale = s.iter().enumerate().map(|(i, r)| r[i].abs()).fold(0.0, f64::max).max(1.0);
    let eps = 1e-10 * scale;
    let mut l = vec![vec![0.0; m]; m];
    for j in 0..m {
        let d = s[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if d < -eps {
            return Err(SimError::NotPsd { pivot: j, value: d });
        }
        if d <= eps {
            for i in j + 1..m {
                let r = s[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
                if r.abs() > eps.sqrt() {
                    return Err(SimError::NotPsd { pivot: j, value: d });
                }
            }
            continue;
        }
        let djj = d.sqrt();
        l[j][j] = djj;
        for i in j + 1..m {
            let r = s[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = r / djj;
        }
    }
    Ok(l)
}

fn softmax(g: &mut [f64]) {
    let max = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in g.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    g.iter_mut().for_each(|x| *x /= sum);
}

fn sigmoid(z: f64) -> f64 {
    omega(z, 1.0, 0.0)
}

#[cfg(feature = "parallel")]
fn map_indices<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_indices<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Logistic-normal term frequencies, one row per study: `softmax(g)` with
/// `g ~ Normal(mu, Sigma)`. With a background logit, rows have one extra
/// trailing entry for the rest of the vocabulary.
pub fn sample_term_frequencies(cfg: &GenConfig) -> Result<Vec<Vec<f64>>, SimError> {
    cfg.validate()?;
    let mu = cfg.mean_vector();
    let l = cholesky(&cfg.covariance())?;
    let m = cfg.n_terms;
    Ok(map_indices(cfg.n_studies, |i| {
        let mut rng = stream_rng(cfg.seed, STREAM_TF + i as u64);
        let z: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let mut g: Vec<f64> = (0..m)
            .map(|a| mu[a] + (0..=a).map(|b| l[a][b] * z[b]).sum::<f64>())
            .collect();
        g.extend(cfg.background_logit);
        softmax(&mut g);
        g
    }))
}

/// Document frequency cutoff `1 / (10 M)`.
pub fn presence_cutoff(n_terms: usize) -> f64 {
    1.0 / (10.0 * n_terms as f64)
}

/// `idf_j = max(0, ln(N / (1 + df_j)))` with `df_j = #{i : tf_ij > cutoff}`.
pub fn compute_idf(tf: &[Vec<f64>], cutoff: f64) -> Vec<f64> {
    let n = tf.len();
    let m = tf.first().map_or(0, Vec::len);
    (0..m)
        .map(|j| {
            let df = tf.iter().filter(|row| row[j] > cutoff).count();
            (n as f64 / (1.0 + df as f64)).ln().max(0.0)
        })
        .collect()
}

/// TF-IDF rows `tf ⊙ idf`.
pub fn tfidf(tf: &[Vec<f64>], idf: &[f64]) -> Vec<Vec<f64>> {
    tf.iter()
        .map(|row| row.iter().zip(idf).map(|(t, w)| t * w).collect())
        .collect()
}

/// Probability that each study is about both query terms.
pub fn match_probabilities(cfg: &GenConfig, x: &[Vec<f64>]) -> Vec<f64> {
    let [a, b] = cfg.query;
    x.iter()
        .map(|row| {
            let (wa, wb) = (omega(row[a], cfg.alpha, cfg.tau), omega(row[b], cfg.alpha, cfg.tau));
            match cfg.match_rule {
                MatchRule::Latent => wa * wb,
                MatchRule::Threshold => f64::from(u8::from(wa > 0.5 && wb > 0.5)),
            }
        })
        .collect()
}

/// Intercept making the mean activation probability equal `rate`, given
/// per-study offsets and match probabilities.
fn calibrate_intercept(eta: &[f64], m: &[f64], gamma: f64, rate: f64) -> f64 {
    let n = eta.len() as f64;
    let mean_rate = |b: f64| -> (f64, f64) {
        let (mut f, mut df) = (0.0, 0.0);
        for (e, mi) in eta.iter().zip(m) {
            let p0 = sigmoid(b + e);
            let p1 = if *mi > 0.0 { sigmoid(b + e + gamma) } else { 0.0 };
            f += mi * p1 + (1.0 - mi) * p0;
            df += mi * p1 * (1.0 - p1) + (1.0 - mi) * p0 * (1.0 - p0);
        }
        (f / n - rate, df / n)
    };
    let (mut lo, mut hi) = (-60.0, 60.0);
    let mut b = (rate / (1.0 - rate)).ln();
    for _ in 0..100 {
        let (f, df) = mean_rate(b);
        if f.abs() < 1e-13 {
            break;
        }
        if f > 0.0 {
            hi = b;
        } else {
            lo = b;
        }
        let next = b - f / df;
        b = if df > 0.0 && next > lo && next < hi { next } else { 0.5 * (lo + hi) };
    }
    b
}

/// Per-voxel parameters.
#[derive(Debug, Clone, PartialEq)]
struct Voxel {
    intercept: f64,
    beta: Vec<f64>,
    gamma: f64,
}

/// Query lift `E[p | match] - E[p | no match]` under match probabilities `m`.
fn lift(v: &Voxel, eta: &[f64], m: &[f64]) -> f64 {
    let (mut s1, mut w1, mut s0, mut w0) = (0.0, 0.0, 0.0, 0.0);
    for (e, mi) in eta.iter().zip(m) {
        s1 += mi * sigmoid(v.intercept + e + v.gamma);
        w1 += mi;
        s0 += (1.0 - mi) * sigmoid(v.intercept + e);
        w0 += 1.0 - mi;
    }
    s1 / w1 - s0 / w0
}

/// Draws reported activations. Returns (per-study sorted voxel lists,
/// truth flags).
pub fn sample_activations(cfg: &GenConfig, x: &[Vec<f64>]) -> Result<(Vec<Vec<u32>>, Vec<bool>), SimError> {
    cfg.validate()?;
    let n = x.len();
    let k = cfg.n_voxels;
    let m = match_probabilities(cfg, x);
    let mass: f64 = m.iter().sum();
    if mass < 1.0 || mass > n as f64 - 1.0 {
        return Err(SimError::InvalidConfig(format!(
            "the query matches {mass:.2} of {n} studies in expectation; the lift is undefined"
        )));
    }
    // realized matches, one draw per study
    let z: Vec<bool> = (0..n)
        .map(|i| stream_rng(cfg.seed, STREAM_MATCH + i as u64).random::<f64>() < m[i])
        .collect();

    let n_linked = (cfg.active_fraction * k as f64).round() as usize;
    let mut truth = vec![false; k];
    let mut order: Vec<usize> = (0..k).collect();
    let mut rng = stream_rng(cfg.seed, STREAM_TRUTH);
    for i in 0..n_linked {
        let j = rng.random_range(i..k);
        order.swap(i, j);
        truth[order[i]] = true;
    }

    let columns = map_indices(k, |v| -> Result<Vec<u32>, SimError> {
        let mut rng = stream_rng(cfg.seed, STREAM_VOXEL + v as u64);
        let mut accepted = None;
        let mut eta = vec![0.0; n];
        for _ in 0..cfg.max_draws {
            let beta: Vec<f64> = (0..cfg.n_terms)
                .map(|_| cfg.background_scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let gamma = if truth[v] {
                rng.random_range(cfg.lift_logit[0]..=cfg.lift_logit[1])
            } else {
                0.0
            };
            for (e, row) in eta.iter_mut().zip(x) {
                *e = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            }
            let mut voxel = Voxel {
                intercept: 0.0,
                beta,
                gamma,
            };
            voxel.intercept = calibrate_intercept(&eta, &m, gamma, cfg.base_rate);
            if (lift(&voxel, &eta, &m) >= cfg.min_lift) == truth[v] {
                accepted = Some(voxel);
                break;
            }
        }
        let voxel = accepted.ok_or(SimError::RejectionBudgetExceeded {
            voxel: v,
            draws: cfg.max_draws,
        })?;
        Ok((0..n)
            .filter(|&i| {
                let logit = voxel.intercept + eta[i] + if z[i] { voxel.gamma } else { 0.0 };
                rng.random::<f64>() < sigmoid(logit)
            })
            .map(|i| i as u32)
            .collect())
    });
    let mut reported = vec![Vec::new(); n];
    for (v, col) in columns.into_iter().enumerate() {
        for i in col? {
            reported[i as usize].push(v as u32);
        }
    }
    Ok((reported, truth))
}

/// Runs the whole generator. Identical configurations give identical
/// datasets.
pub fn generate(cfg: &GenConfig) -> Result<SimulatedDataset, SimError> {
    let tf = sample_term_frequencies(cfg)?;
    let idf = compute_idf(&tf, presence_cutoff(cfg.n_terms));
    let mut x = tfidf(&tf, &idf);
    for row in &mut x {
        row.truncate(cfg.n_terms);
    }
    let (reported, truth) = sample_activations(cfg, &x)?;
    let width = cfg.n_studies.to_string().len();
    let studies = (0..cfg.n_studies).map(|i| format!("study{i:0width$}")).collect();
    let vwidth = cfg.n_voxels.to_string().len();
    let voxels = (0..cfg.n_voxels).map(|v| format!("v{v:0vwidth$}")).collect();
    let terms = cfg.term_names();
    let features = x.iter().enumerate().flat_map(|(i, row)| {
        row.iter()
            .enumerate()
            .map(move |(j, &val)| (i as u32, j as u32, val))
    });
    let activations = reported
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().map(move |&v| (i as u32, v)));
    let query = [terms[cfg.query[0]].clone(), terms[cfg.query[1]].clone()];
    let dataset = CbmaDataset::new(studies, terms, voxels, features, activations)?;
    Ok(SimulatedDataset { dataset, truth, query })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig {
            n_studies: 400,
            n_voxels: 100,
            ..GenConfig::default()
        }
    }

    #[test]
    fn degenerate_distribution_gives_uniform_frequencies() {
        let cfg = GenConfig {
            n_studies: 5,
            n_terms: 4,
            mu: Some(vec![0.0; 4]),
            sigma: Some(vec![vec![0.0; 4]; 4]),
            background_logit: None,
            ..GenConfig::default()
        };
        for row in sample_term_frequencies(&cfg).unwrap() {
            assert!(row.iter().all(|&t| t == 0.25), "{row:?}");
        }
    }

    #[test]
    fn background_column_is_dropped() {
        let cfg = small();
        assert_eq!(sample_term_frequencies(&cfg).unwrap()[0].len(), cfg.n_terms + 1);
        let sim = generate(&cfg).unwrap();
        assert_eq!(sim.dataset.n_terms(), cfg.n_terms);
    }

    #[test]
    fn frequencies_are_normalized() {
        for row in sample_term_frequencies(&small()).unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&t| t > 0.0));
        }
    }

    #[test]
    fn logistic_normal_mean_matches_quadrature() {
        // M = 2, mu = 0, Sigma = I: E[softmax(g)_0] = E[sigmoid(g0 - g1)] with
        // g0 - g1 ~ Normal(0, 2), which is 1/2 by symmetry; check the second
        // moment against trapezoidal quadrature.
        let cfg = GenConfig {
            n_studies: 100_000,
            n_terms: 2,
            mu: Some(vec![0.0, 0.0]),
            sigma: Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            background_logit: None,
            ..GenConfig::default()
        };
        let tf = sample_term_frequencies(&cfg).unwrap();
        let mean = tf.iter().map(|r| r[0]).sum::<f64>() / tf.len() as f64;
        let second = tf.iter().map(|r| r[0] * r[0]).sum::<f64>() / tf.len() as f64;
        let sd = 2f64.sqrt();
        let (mut quad_mean, mut quad_second) = (0.0, 0.0);
        let h = 1e-3;
        let mut u: f64 = -12.0;
        while u <= 12.0 {
            let dens = (-u * u / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let s = sigmoid(sd * u);
            quad_mean += h * dens * s;
            quad_second += h * dens * s * s;
            u += h;
        }
        assert!((mean - quad_mean).abs() < 1e-2, "{mean} vs {quad_mean}");
        assert!((second - quad_second).abs() < 1e-2, "{second} vs {quad_second}");
    }

    #[test]
    fn idf_examples() {
        let everywhere = vec![vec![0.5]; 4];
        assert_eq!(compute_idf(&everywhere, 0.0), vec![0.0]);
        let mut once = vec![vec![0.0]; 9];
        once[3][0] = 0.3;
        assert!((compute_idf(&once, 0.0)[0] - 4.5f64.ln()).abs() < 1e-15);
        assert_eq!(compute_idf(&[vec![1.0]], 0.0), vec![0.0]);
    }

    #[test]
    fn cholesky_reconstructs_and_rejects() {
        let s = GenConfig::default().covariance();
        let l = cholesky(&s).unwrap();
        for i in 0..s.len() {
            for j in 0..s.len() {
                let r: f64 = (0..s.len()).map(|k| l[i][k] * l[j][k]).sum();
                assert!((r - s[i][j]).abs() < 1e-12);
            }
        }
        assert!(matches!(
            cholesky(&[vec![1.0, 2.0], vec![2.0, 1.0]]),
            Err(SimError::NotPsd { .. })
        ));
    }

    #[test]
    fn truth_cardinality() {
        let cfg = GenConfig {
            n_studies: 1000,
            n_voxels: 1000,
            ..GenConfig::default()
        };
        let sim = generate(&cfg).unwrap();
        assert_eq!(sim.truth.iter().filter(|&&t| t).count(), 50);
    }

    #[test]
    fn constant_rate_sanity() {
        let cfg = GenConfig {
            n_studies: 2000,
            n_voxels: 50,
            background_scale: 0.0,
            base_rate: 0.05,
            ..GenConfig::default()
        };
        let sim = generate(&cfg).unwrap();
        let ds = &sim.dataset;
        let counts = ds.voxel_counts();
        let n = ds.n_studies() as f64;
        let sd = (n * 0.05 * 0.95).sqrt();
        for (v, c) in counts.iter().enumerate() {
            if !sim.truth[v] {
                assert!((f64::from(*c) - n * 0.05).abs() < 4.0 * sd, "voxel {v}: {c}");
            }
        }
    }

    #[test]
    fn truth_voxels_separate_in_large_samples() {
        let cfg = GenConfig {
            n_studies: 10_000,
            n_voxels: 200,
            ..GenConfig::default()
        };
        let sim = generate(&cfg).unwrap();
        let soft = crate::cbma::ThresholdConfig::default();
        let query = crate::cbma::TermQuery::conjunction(&sim.query);
        let est = crate::cbma::estimate(&sim.dataset, &soft, &query.condition).unwrap();
        let p = est.probabilities();
        let lowest_truth = (0..200).filter(|&k| sim.truth[k]).map(|k| p[k]).fold(f64::INFINITY, f64::min);
        let highest_other = (0..200).filter(|&k| !sim.truth[k]).map(|k| p[k]).fold(0.0, f64::max);
        assert!(lowest_truth > highest_other, "{lowest_truth} <= {highest_other}");
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&GenConfig { seed: 7, ..small() }).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn sparsity_close_to_configuration() {
        let cfg = small();
        let sim = generate(&cfg).unwrap();
        let per_study = sim.dataset.activation_count() as f64 / cfg.n_studies as f64;
        let expected = cfg.base_rate * cfg.n_voxels as f64;
        assert!(per_study > expected / 2.0 && per_study < expected * 2.0, "{per_study}");
    }

    #[test]
    fn toml_defaults_and_overrides() {
        let cfg: GenConfig = toml::from_str("n_studies = 10\nquery = [2, 3]\nmatch_rule = \"threshold\"").unwrap();
        assert_eq!(cfg.n_studies, 10);
        assert_eq!(cfg.query, [2, 3]);
        assert_eq!(cfg.match_rule, MatchRule::Threshold);
        assert_eq!(cfg.n_voxels, 1000);
        assert!(toml::from_str::<GenConfig>("bogus = 1").is_err());
    }

    #[test]
    fn invalid_configurations() {
        assert!(GenConfig { active_fraction: 1.0, ..small() }.validate().is_err());
        assert!(GenConfig { query: [1, 1], ..small() }.validate().is_err());
        assert!(GenConfig { mu: Some(vec![0.0]), ..small() }.validate().is_err());
    }
}
