//! Paired nonparametric inference.
//!
//! * Wilcoxon signed-rank test, two-sided. Zero differences are dropped and
//!   tied magnitudes share their average rank. Up to [`EXACT_MAX_N`] nonzero
//!   pairs the p-value comes from the exact permutation distribution of W⁺;
//!   beyond that from a normal approximation with tie-corrected variance and
//!   a 0.5 continuity correction.
//! * Holm-Bonferroni step-down adjustment.
//! * Median paired difference as effect size, normal-theory confidence
//!   intervals.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest number of nonzero pairs evaluated with the exact null distribution.
pub const EXACT_MAX_N: usize = 25;
/// Fewest nonzero pairs accepted for inference.
pub const MIN_PAIRS: usize = 5;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_CI_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    /// Exact up to [`EXACT_MAX_N`] nonzero pairs, normal beyond.
    #[default]
    Auto,
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonOutcome<S = f64> {
    /// Sum of ranks of the positive differences.
    pub w_plus: S,
    pub n_used: usize,
    pub n_zero_dropped: usize,
    pub p_value: S,
    /// [`PValueMethod::Exact`] or [`PValueMethod::Normal`], never `Auto`.
    pub method: PValueMethod,
}

/// Nonzero differences ranked by magnitude. Ranks are stored doubled so tied
/// (half-integer) ranks stay integral.
struct SignedRanks {
    doubled: Vec<u64>,
    positive: Vec<bool>,
    /// Sizes of tie groups among the magnitudes.
    ties: Vec<u64>,
    n_zero: usize,
}

fn signed_ranks<S: Scalar>(diffs: &[S]) -> SignedRanks {
    let mut nonzero: Vec<S> = diffs.iter().copied().filter(|d| !d.is_zero()).collect();
    let n_zero = diffs.len() - nonzero.len();
    nonzero.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap_or(Ordering::Equal));
    let n = nonzero.len();
    let mut doubled = vec![0u64; n];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && nonzero[j + 1].abs() == nonzero[i].abs() {
            j += 1;
        }
        // 1-based positions i+1..=j+1 share rank (i+1 + j+1)/2
        let r = (i + 1 + j + 1) as u64;
        doubled[i..=j].fill(r);
        if j > i {
            ties.push((j - i + 1) as u64);
        }
        i = j + 1;
    }
    SignedRanks {
        doubled,
        positive: nonzero.iter().map(|d| *d > S::zero()).collect(),
        ties,
        n_zero,
    }
}

pub fn wilcoxon_signed_rank<S: Scalar>(diffs: &[S]) -> Result<WilcoxonOutcome<S>> {
    wilcoxon_signed_rank_with(diffs, PValueMethod::Auto)
}

pub fn wilcoxon_signed_rank_with<S: Scalar>(
    diffs: &[S],
    method: PValueMethod,
) -> Result<WilcoxonOutcome<S>> {
    if let Some(d) = diffs.iter().find(|d| !d.is_finite()) {
        return Err(Error::Domain(format!("non-finite paired difference {d}")));
    }
    if !diffs.is_empty() && diffs.iter().all(|d| d.is_zero()) {
        return Err(Error::DegenerateSample(format!(
            "all {} paired differences are zero",
            diffs.len()
        )));
    }
    let ranks = signed_ranks(diffs);
    let n = ranks.doubled.len();
    if n < MIN_PAIRS {
        return Err(Error::InsufficientData(format!(
            "{n} nonzero paired differences, need at least {MIN_PAIRS}"
        )));
    }
    let w2: u64 = ranks
        .doubled
        .iter()
        .zip(&ranks.positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    let method = match method {
        PValueMethod::Auto if n <= EXACT_MAX_N => PValueMethod::Exact,
        PValueMethod::Auto => PValueMethod::Normal,
        m => m,
    };
    let p = match method {
        PValueMethod::Exact => exact_p(&ranks.doubled, w2),
        _ => normal_p(n, &ranks.ties, w2),
    };
    Ok(WilcoxonOutcome {
        w_plus: S::of(w2 as f64 / 2.0),
        n_used: n,
        n_zero_dropped: ranks.n_zero,
        p_value: S::of(p),
        method,
    })
}

/// Two-sided p from the permutation distribution of doubled W⁺ under random signs.
fn exact_p(doubled: &[u64], w2: u64) -> f64 {
    let total: u64 = doubled.iter().sum();
    let mut dist = vec![0.0f64; total as usize + 1];
    dist[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            let mass = dist[s] * 0.5;
            dist[s] = mass;
            dist[s + r] += mass;
        }
        reach += r;
    }
    let w2 = w2 as usize;
    let lower: f64 = dist[..=w2].iter().sum();
    let upper: f64 = dist[w2..].iter().sum();
    (2.0 * lower.min(upper)).min(1.0)
}

fn normal_p(n: usize, ties: &[u64], w2: u64) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let w = w2 as f64 / 2.0;
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    (2.0 * standard_normal().cdf(-z)).min(1.0)
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// Holm-adjusted p-values and rejection flags, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct HolmOutcome<S = f64> {
    pub adjusted: Vec<S>,
    pub reject: Vec<bool>,
}

pub fn holm_bonferroni<S: Scalar>(p_values: &[S], alpha: S) -> Result<HolmOutcome<S>> {
    if p_values.is_empty() {
        return Err(Error::Domain("Holm correction needs at least one p-value".into()));
    }
    if let Some(p) = p_values.iter().find(|p| !(**p >= S::zero() && **p <= S::one())) {
        return Err(Error::Domain(format!("p-value {p} outside [0, 1]")));
    }
    if !(alpha > S::zero() && alpha < S::one()) {
        return Err(Error::Domain(format!("alpha {alpha} outside (0, 1)")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].partial_cmp(&p_values[b]).unwrap().then(a.cmp(&b)));

    let mut adjusted = vec![S::zero(); m];
    let mut reject = vec![false; m];
    let mut running = S::zero();
    let mut rejecting = true;
    for (rank, &idx) in order.iter().enumerate() {
        let factor = S::of((m - rank) as f64);
        let p = p_values[idx];
        running = running.max((factor * p).min(S::one()));
        adjusted[idx] = running;
        rejecting = rejecting && p <= alpha / factor;
        reject[idx] = rejecting;
    }
    Ok(HolmOutcome { adjusted, reject })
}

pub fn mean<S: Scalar>(values: &[S]) -> Result<S> {
    if values.is_empty() {
        return Err(Error::InsufficientData("mean of an empty sample".into()));
    }
    let base = values[0];
    let offset: S = values.iter().map(|&v| v - base).sum();
    Ok(base + offset / S::of(values.len() as f64))
}

/// Sample standard deviation with the n−1 denominator; 0 for a single value.
pub fn sample_std<S: Scalar>(values: &[S]) -> Result<S> {
    let m = mean(values)?;
    if values.len() == 1 {
        return Ok(S::zero());
    }
    let ss: S = values.iter().map(|&v| (v - m) * (v - m)).sum();
    Ok((ss / S::of((values.len() - 1) as f64)).sqrt())
}

/// Median of the paired differences; even lengths average the central pair.
pub fn effect_size_median_diff<S: Scalar>(diffs: &[S]) -> Result<S> {
    if diffs.is_empty() {
        return Err(Error::InsufficientData("median of an empty sample".into()));
    }
    let mut sorted = diffs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / S::of(2.0)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct ConfidenceInterval<S = f64> {
    pub mean: S,
    pub half_width: S,
    pub level: S,
    /// Set when the interval rests on fewer than two observations.
    pub degenerate: bool,
}

impl<S: Scalar> ConfidenceInterval<S> {
    pub fn lower(&self) -> S {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> S {
        self.mean + self.half_width
    }
}

/// `mean ± z · std / √n` with z the two-sided normal quantile for `level`.
pub fn normal_ci_from_summary<S: Scalar>(
    mean: S,
    std: S,
    n: usize,
    level: S,
) -> Result<ConfidenceInterval<S>> {
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "confidence interval needs at least 2 observations, got {n}"
        )));
    }
    if !(level > S::zero() && level < S::one()) {
        return Err(Error::Domain(format!("confidence level {level} outside (0, 1)")));
    }
    if std < S::zero() {
        return Err(Error::Domain(format!("negative standard deviation {std}")));
    }
    let z = standard_normal().inverse_cdf((1.0 + level.as_f64()) / 2.0);
    Ok(ConfidenceInterval {
        mean,
        half_width: S::of(z) * std / S::of(n as f64).sqrt(),
        level,
        degenerate: false,
    })
}

pub fn normal_ci<S: Scalar>(scores: &[S], level: S) -> Result<ConfidenceInterval<S>> {
    if scores.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "confidence interval needs at least 2 observations, got {}",
            scores.len()
        )));
    }
    normal_ci_from_summary(mean(scores)?, sample_std(scores)?, scores.len(), level)
}

/// Outcome class of one paired test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStatus {
    Exact,
    Normal,
    /// Every difference was zero.
    Degenerate,
    /// Fewer than [`MIN_PAIRS`] nonzero differences.
    InsufficientData,
}

/// Raw result of a Wilcoxon test on one set of paired differences, with
/// untestable samples folded into `p_raw = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedTest<S = f64> {
    pub status: TestStatus,
    pub w_plus: Option<S>,
    pub p_raw: S,
    pub n_pairs: usize,
    pub n_zero_dropped: usize,
    pub effect_size: S,
}

pub fn paired_test<S: Scalar>(diffs: &[S]) -> Result<PairedTest<S>> {
    let effect_size = effect_size_median_diff(diffs)?;
    let n_zero = diffs.iter().filter(|d| d.is_zero()).count();
    let (status, w_plus, p_raw) = match wilcoxon_signed_rank(diffs) {
        Ok(w) => {
            let status = if w.method == PValueMethod::Exact {
                TestStatus::Exact
            } else {
                TestStatus::Normal
            };
            (status, Some(w.w_plus), w.p_value)
        }
        Err(Error::DegenerateSample(_)) => (TestStatus::Degenerate, None, S::one()),
        Err(Error::InsufficientData(_)) => (TestStatus::InsufficientData, None, S::one()),
        Err(e) => return Err(e),
    };
    Ok(PairedTest {
        status,
        w_plus,
        p_raw,
        n_pairs: diffs.len(),
        n_zero_dropped: n_zero,
        effect_size,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct PairwiseTestResult<S = f64> {
    pub method_a: String,
    pub method_b: String,
    pub status: TestStatus,
    pub n_pairs: usize,
    pub n_zero_dropped: usize,
    /// W⁺ of the differences `a − b`; absent when the test could not run.
    pub w_statistic: Option<S>,
    pub p_raw: S,
    pub p_adjusted: S,
    /// Median of `a − b`.
    pub effect_size: S,
    pub significant: bool,
}

/// Per-method scores keyed by image id.
pub type ScoreTable<S> = BTreeMap<String, BTreeMap<String, S>>;

/// Image ids, then each method's scores in that image order.
pub type AlignedColumns<'a, S> = (Vec<&'a str>, Vec<(&'a str, Vec<S>)>);

/// Scores of every method in one shared image order (sorted image id).
pub fn aligned_columns<S: Scalar>(scores: &ScoreTable<S>) -> Result<AlignedColumns<'_, S>> {
    let mut methods = scores.iter();
    let Some((_, first)) = methods.next() else {
        return Ok((Vec::new(), Vec::new()));
    };
    let image_ids: Vec<&str> = first.keys().map(String::as_str).collect();
    for (m, per_image) in scores {
        if per_image.len() != image_ids.len()
            || per_image.keys().zip(&image_ids).any(|(a, b)| a != b)
        {
            return Err(Error::Validation(format!(
                "method {m:?} is scored on a different image set"
            )));
        }
    }
    let columns = scores
        .iter()
        .map(|(m, per_image)| (m.as_str(), per_image.values().copied().collect()))
        .collect();
    Ok((image_ids, columns))
}

/// Every unordered method pair tested once, in lexicographic pair order,
/// Holm-corrected as one family.
pub fn run_pairwise_family<S: Scalar>(
    scores: &ScoreTable<S>,
    alpha: S,
) -> Result<Vec<PairwiseTestResult<S>>> {
    let (_, columns) = aligned_columns(scores)?;
    let pairs: Vec<(usize, usize)> = (0..columns.len())
        .flat_map(|i| (i + 1..columns.len()).map(move |j| (i, j)))
        .collect();
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let tests = pairs
        .par_iter()
        .map(|&(i, j)| {
            let diffs: Vec<S> = columns[i]
                .1
                .iter()
                .zip(&columns[j].1)
                .map(|(&a, &b)| a - b)
                .collect();
            paired_test(&diffs)
        })
        .collect::<Result<Vec<_>>>()?;
    let raw: Vec<S> = tests.iter().map(|t| t.p_raw).collect();
    let holm = holm_bonferroni(&raw, alpha)?;
    Ok(pairs
        .iter()
        .zip(tests)
        .enumerate()
        .map(|(k, (&(i, j), t))| {
            let tested = matches!(t.status, TestStatus::Exact | TestStatus::Normal);
            PairwiseTestResult {
                method_a: columns[i].0.to_string(),
                method_b: columns[j].0.to_string(),
                status: t.status,
                n_pairs: t.n_pairs,
                n_zero_dropped: t.n_zero_dropped,
                w_statistic: t.w_plus,
                p_raw: t.p_raw,
                p_adjusted: holm.adjusted[k],
                effect_size: t.effect_size,
                significant: tested && holm.reject[k],
            }
        })
        .collect())
}
