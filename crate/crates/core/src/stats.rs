//! G-test of independence, Bonferroni correction, F1 and the consistency
//! of thresholded activation maps.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("contingency table has a negative or non-finite count")]
    InvalidCount,
    #[error("contingency table is empty")]
    EmptyTable,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
}

/// Counts cross-classifying voxel activation (first index) and condition
/// match (second index). Counts may be weighted.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContingencyTable2x2 {
    pub n11: f64,
    pub n10: f64,
    pub n01: f64,
    pub n00: f64,
}

impl ContingencyTable2x2 {
    pub fn new(n11: f64, n10: f64, n01: f64, n00: f64) -> Self {
        ContingencyTable2x2 { n11, n10, n01, n00 }
    }

    pub fn total(&self) -> f64 {
        self.n11 + self.n10 + self.n01 + self.n00
    }

    /// Whether the observed association is positive (odds ratio above 1).
    pub fn positive_association(&self) -> bool {
        self.n11 * self.n00 > self.n10 * self.n01
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GTest {
    pub g: f64,
    pub p_value: f64,
    /// A margin was zero; `g = 0` and `p = 1` by convention.
    pub degenerate: bool,
}

/// `G = 2 Σ O ln(O/E)` with a chi-square (1 df) p-value.
pub fn g_test(t: &ContingencyTable2x2) -> Result<GTest, StatsError> {
    let cells = [t.n11, t.n10, t.n01, t.n00];
    if cells.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(StatsError::InvalidCount);
    }
    let n = t.total();
    if n <= 0.0 {
        return Err(StatsError::EmptyTable);
    }
    let rows = [t.n11 + t.n10, t.n01 + t.n00];
    let cols = [t.n11 + t.n01, t.n10 + t.n00];
    if rows.iter().chain(&cols).any(|m| *m <= 0.0) {
        return Ok(GTest {
            g: 0.0,
            p_value: 1.0,
            degenerate: true,
        });
    }
    let mut g = 0.0;
    for (i, &o) in cells.iter().enumerate() {
        if o > 0.0 {
            let e = rows[i / 2] * cols[i % 2] / n;
            g += o * (o / e).ln();
        }
    }
    let g = (2.0 * g).max(0.0);
    Ok(GTest {
        g,
        p_value: chi_square_sf_1df(g),
        degenerate: false,
    })
}

/// Survival function of the chi-square distribution with one degree of
/// freedom.
pub fn chi_square_sf_1df(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    regularized_gamma_q(0.5, x / 2.0)
}

/// Lanczos approximation (g = 7, n = 9) of `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized upper incomplete gamma function `Q(a, x)`.
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // series for P(a, x)
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        1.0 - sum * log_prefix.exp()
    } else {
        // modified Lentz continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        log_prefix.exp() * h
    }
}

/// Flags `p < base / K` where `K` is the number of tests.
pub fn bonferroni_threshold(p_values: &[f64], base: f64) -> Result<Vec<bool>, StatsError> {
    if p_values.is_empty() {
        return Err(StatsError::Empty);
    }
    let threshold = base / p_values.len() as f64;
    Ok(p_values.iter().map(|p| *p < threshold).collect())
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(predicted: &[bool], truth: &[bool]) -> Result<f64, StatsError> {
    if predicted.len() != truth.len() {
        return Err(StatsError::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    let tp = predicted.iter().zip(truth).filter(|(p, t)| **p && **t).count() as f64;
    let pp = predicted.iter().filter(|p| **p).count() as f64;
    let ap = truth.iter().filter(|t| **t).count() as f64;
    let precision = if pp > 0.0 { tp / pp } else { 0.0 };
    let recall = if ap > 0.0 { tp / ap } else { 0.0 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Consistency of binary maps across sub-samples (rows): the mean over
/// voxels of `2 |mean_m(ŷ) - 1/2|`. It is 1 when every voxel gets the same
/// prediction in every sub-sample and 0 when each voxel is active in
/// exactly half of them.
pub fn consistency(maps: &[Vec<bool>]) -> Result<f64, StatsError> {
    let m = maps.len();
    let k = maps.first().map_or(0, Vec::len);
    if m == 0 || k == 0 {
        return Err(StatsError::Empty);
    }
    if let Some(bad) = maps.iter().find(|r| r.len() != k) {
        return Err(StatsError::LengthMismatch {
            left: k,
            right: bad.len(),
        });
    }
    let mut total = 0.0;
    for col in 0..k {
        let active = maps.iter().filter(|r| r[col]).count() as f64;
        total += 2.0 * (active / m as f64 - 0.5).abs();
    }
    Ok(total / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn independent_table() {
        let r = g_test(&ContingencyTable2x2::new(10.0, 10.0, 10.0, 10.0)).unwrap();
        assert!(r.g.abs() < 1e-12);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfectly_associated_table() {
        let r = g_test(&ContingencyTable2x2::new(20.0, 0.0, 0.0, 20.0)).unwrap();
        assert!((r.g - 80.0 * 2f64.ln()).abs() < 1e-10);
        assert!((r.g - 55.45).abs() < 0.01);
    }

    #[test]
    fn zero_margin_is_degenerate() {
        let r = g_test(&ContingencyTable2x2::new(0.0, 0.0, 5.0, 7.0)).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
        assert!(g_test(&ContingencyTable2x2::default()).is_err());
    }

    #[test]
    fn chi_square_matches_reference() {
        let reference = ChiSquared::new(1.0).unwrap();
        for &x in &[1e-8, 0.01, 0.5, 1.0, 1.5, 2.9, 3.0, 10.0, 55.45, 200.0] {
            let ours = chi_square_sf_1df(x);
            let theirs = reference.sf(x);
            assert!((ours - theirs).abs() < 1e-12, "x={x}: {ours} vs {theirs}");
        }
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        assert!(ln_gamma(1.0).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bonferroni_examples() {
        let mut ps = vec![1.0; 1000];
        ps[0] = 1e-6;
        ps[1] = 5e-5;
        let flags = bonferroni_threshold(&ps, 0.01).unwrap();
        assert!(flags[0] && !flags[1]);
        assert_eq!(bonferroni_threshold(&[0.009], 0.01).unwrap(), vec![true]);
        assert!(bonferroni_threshold(&[], 0.01).is_err());
    }

    #[test]
    fn f1_examples() {
        let t = [true, true, false, false];
        assert_eq!(f1_score(&t, &t).unwrap(), 1.0);
        assert_eq!(f1_score(&[false; 4], &t).unwrap(), 0.0);
        // tp = 1, precision 1/2, recall 1/2
        assert!((f1_score(&[true, false, true, false], &t).unwrap() - 0.5).abs() < 1e-15);
        assert!(f1_score(&[true], &t).is_err());
    }

    #[test]
    fn consistency_examples() {
        assert_eq!(consistency(&[vec![true; 3], vec![true; 3]]).unwrap(), 1.0);
        assert_eq!(consistency(&[vec![true, false], vec![false, true]]).unwrap(), 0.0);
        assert_eq!(consistency(&[vec![true, false], vec![true, true]]).unwrap(), 0.5);
        assert_eq!(consistency(&[vec![false, true, true]]).unwrap(), 1.0);
        assert!(consistency(&[]).is_err());
    }

    fn table() -> impl Strategy<Value = ContingencyTable2x2> {
        (0u32..200, 0u32..200, 0u32..200, 0u32..200)
            .prop_map(|(a, b, c, d)| ContingencyTable2x2::new(a as f64, b as f64, c as f64, d as f64))
            .prop_filter("nonempty", |t| t.total() > 0.0)
    }

    fn maps() -> impl Strategy<Value = Vec<Vec<bool>>> {
        (1usize..6, 1usize..8).prop_flat_map(|(m, k)| prop::collection::vec(prop::collection::vec(any::<bool>(), k), m))
    }

    proptest! {
        #[test]
        fn g_is_nonnegative(t in table()) {
            let r = g_test(&t).unwrap();
            prop_assert!(r.g >= 0.0);
            prop_assert!((0.0..=1.0).contains(&r.p_value));
        }

        #[test]
        fn p_decreases_with_g(a in 0.0f64..100.0, b in 0.0f64..100.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(chi_square_sf_1df(hi) <= chi_square_sf_1df(lo));
        }

        #[test]
        fn bonferroni_is_stricter(ps in prop::collection::vec(0.0f64..0.02, 1..50)) {
            let flags = bonferroni_threshold(&ps, 0.01).unwrap();
            for (f, p) in flags.iter().zip(&ps) {
                prop_assert!(!*f || *p < 0.01);
            }
        }

        #[test]
        fn consistency_in_unit_interval_and_flip_symmetric(m in maps(), col in 0usize..8) {
            let c = consistency(&m).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
            let col = col % m[0].len();
            let flipped: Vec<Vec<bool>> = m
                .iter()
                .map(|r| r.iter().enumerate().map(|(i, b)| if i == col { !b } else { *b }).collect())
                .collect();
            prop_assert!((consistency(&flipped).unwrap() - c).abs() < 1e-15);
        }
    }
}
