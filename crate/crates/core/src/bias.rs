//! Threshold-selection bias: how far single-threshold IoU strays from the
//! threshold-averaged score, how much that gap swings between a low and a
//! high threshold, and whether method rankings flip between criteria.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{IoUCurve, ThresholdGrid};
use crate::scalar::Scalar;
use crate::stats::{self, holm_bonferroni, paired_test, TestStatus};

/// Thresholds whose relative differences define the performance swing.
pub const SWING_LOW_TAU: f64 = 0.3;
pub const SWING_HIGH_TAU: f64 = 0.7;
/// Single thresholds reported next to AUC-IoU by default.
pub const DEFAULT_TAUS_OF_INTEREST: [f64; 3] = [0.3, 0.5, 0.7];

/// `(auc − iou_tau) / iou_tau × 100`; `None` when `iou_tau` is not positive.
pub fn relative_difference<S: Scalar>(auc: S, iou_tau: S) -> Option<S> {
    (iou_tau > S::zero()).then(|| (auc - iou_tau) / iou_tau * S::of(100.0))
}

/// Absolute gap, in percentage points, between two relative differences.
pub fn performance_swing<S: Scalar>(rel_low: Option<S>, rel_high: Option<S>) -> Option<S> {
    Some((rel_low? - rel_high?).abs())
}

/// Per-image curves keyed by method, then image id.
pub type CurveTable<S> = BTreeMap<String, BTreeMap<String, IoUCurve<S>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct BiasPoint<S = f64> {
    pub tau: S,
    pub iou_mean: S,
    /// Relative difference of the mean AUC against the mean IoU at `tau`.
    pub rel_diff: Option<S>,
    pub status: TestStatus,
    /// W⁺ of the per-image differences `auc − iou(tau)`.
    pub w_statistic: Option<S>,
    pub p_raw: S,
    pub p_adjusted: S,
    /// Median per-image `auc − iou(tau)`.
    pub effect_size: S,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct ThresholdBiasRow<S = f64> {
    pub method_id: String,
    pub auc_mean: S,
    /// One entry per grid threshold, in grid order.
    pub points: Vec<BiasPoint<S>>,
    pub swing: Option<S>,
}

impl<S: Scalar> ThresholdBiasRow<S> {
    pub fn point_at(&self, tau: S) -> Option<&BiasPoint<S>> {
        self.points
            .iter()
            .find(|p| (p.tau - tau).abs().as_f64() <= crate::metrics::TAU_LOOKUP_EPS)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct ThresholdBiasTable<S = f64> {
    pub rows: Vec<ThresholdBiasRow<S>>,
    /// Size of the Holm family: methods × grid thresholds.
    pub n_tests: usize,
    pub taus_of_interest: Vec<S>,
    pub swing_taus: (S, S),
}

fn shared_grid<S: Scalar>(curves: &CurveTable<S>) -> Result<ThresholdGrid<S>> {
    let grid = curves
        .values()
        .flat_map(|m| m.values())
        .next()
        .map(|c| c.grid.clone())
        .ok_or_else(|| Error::InsufficientData("no curves to analyse".into()))?;
    if curves.values().flat_map(|m| m.values()).any(|c| c.grid != grid) {
        return Err(Error::Validation("curves use different threshold grids".into()));
    }
    Ok(grid)
}

/// Mean AUC against mean IoU at every grid threshold, for every method, with
/// paired Wilcoxon tests of per-image AUC versus per-image IoU(τ) corrected
/// as a single Holm family across all methods and thresholds.
pub fn threshold_bias_table<S: Scalar>(
    curves: &CurveTable<S>,
    taus_of_interest: &[S],
    swing_taus: (S, S),
    alpha: S,
) -> Result<ThresholdBiasTable<S>> {
    let grid = shared_grid(curves)?;
    if let Some(t) = taus_of_interest.iter().find(|&&t| grid.position(t).is_none()) {
        return Err(Error::Validation(format!("threshold {t} is not on the grid")));
    }
    // alignment check on image sets
    let first_ids: Vec<&String> = curves.values().next().unwrap().keys().collect();
    for (m, per_image) in curves {
        if !per_image.keys().eq(first_ids.iter().copied()) {
            return Err(Error::Validation(format!(
                "method {m:?} has curves for a different image set"
            )));
        }
    }

    struct Partial<S> {
        method_id: String,
        auc_mean: S,
        iou_means: Vec<S>,
        tests: Vec<stats::PairedTest<S>>,
    }

    let partials = curves
        .par_iter()
        .map(|(method, per_image)| {
            let aucs: Vec<S> = per_image.values().map(|c| c.auc).collect();
            let auc_mean = stats::mean(&aucs)?;
            let mut iou_means = Vec::with_capacity(grid.len());
            let mut tests = Vec::with_capacity(grid.len());
            for i in 0..grid.len() {
                let ious: Vec<S> = per_image.values().map(|c| c.ious[i]).collect();
                iou_means.push(stats::mean(&ious)?);
                let diffs: Vec<S> = aucs.iter().zip(&ious).map(|(&a, &b)| a - b).collect();
                tests.push(paired_test(&diffs)?);
            }
            Ok(Partial {
                method_id: method.clone(),
                auc_mean,
                iou_means,
                tests,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let raw: Vec<S> = partials
        .iter()
        .flat_map(|p| p.tests.iter().map(|t| t.p_raw))
        .collect();
    let holm = holm_bonferroni(&raw, alpha)?;

    let mut k = 0;
    let rows = partials
        .into_iter()
        .map(|p| {
            let points: Vec<BiasPoint<S>> = p
                .tests
                .into_iter()
                .zip(&p.iou_means)
                .zip(grid.taus())
                .map(|((t, &iou_mean), &tau)| {
                    let tested = matches!(t.status, TestStatus::Exact | TestStatus::Normal);
                    let point = BiasPoint {
                        tau,
                        iou_mean,
                        rel_diff: relative_difference(p.auc_mean, iou_mean),
                        status: t.status,
                        w_statistic: t.w_plus,
                        p_raw: t.p_raw,
                        p_adjusted: holm.adjusted[k],
                        effect_size: t.effect_size,
                        significant: tested && holm.reject[k],
                    };
                    k += 1;
                    point
                })
                .collect();
            let rel_at = |tau: S| grid.position(tau).and_then(|i| points[i].rel_diff);
            let swing = performance_swing(rel_at(swing_taus.0), rel_at(swing_taus.1));
            ThresholdBiasRow {
                method_id: p.method_id,
                auc_mean: p.auc_mean,
                points,
                swing,
            }
        })
        .collect();

    Ok(ThresholdBiasTable {
        rows,
        n_tests: raw.len(),
        taus_of_interest: taus_of_interest.to_vec(),
        swing_taus,
    })
}

/// Method orderings under two criteria and the pairs whose order flips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingComparison {
    pub criterion_a: String,
    pub criterion_b: String,
    /// 1 = best. Ties are broken by method id and flagged below.
    pub rank_a: BTreeMap<String, usize>,
    pub rank_b: BTreeMap<String, usize>,
    pub ties_a: bool,
    pub ties_b: bool,
    /// Lexicographically ordered method pairs whose relative order differs.
    pub reversals: Vec<(String, String)>,
}

fn descending_ranks<S: Scalar>(scores: &BTreeMap<String, S>) -> (BTreeMap<String, usize>, bool) {
    let mut order: Vec<(&String, S)> = scores.iter().map(|(m, &s)| (m, s)).collect();
    // BTreeMap iteration is already by id, and the sort is stable
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let ties = order.windows(2).any(|w| w[0].1 == w[1].1);
    let ranks = order
        .into_iter()
        .enumerate()
        .map(|(i, (m, _))| (m.clone(), i + 1))
        .collect();
    (ranks, ties)
}

pub fn ranking_comparison<S: Scalar>(
    criterion_a: &str,
    scores_a: &BTreeMap<String, S>,
    criterion_b: &str,
    scores_b: &BTreeMap<String, S>,
) -> Result<RankingComparison> {
    if !scores_a.keys().eq(scores_b.keys()) {
        return Err(Error::Validation(format!(
            "criteria {criterion_a:?} and {criterion_b:?} rank different method sets"
        )));
    }
    let (rank_a, ties_a) = descending_ranks(scores_a);
    let (rank_b, ties_b) = descending_ranks(scores_b);
    let methods: Vec<&String> = scores_a.keys().collect();
    let mut reversals = Vec::new();
    for (i, x) in methods.iter().enumerate() {
        for y in &methods[i + 1..] {
            let da = rank_a[*x].cmp(&rank_a[*y]);
            let db = rank_b[*x].cmp(&rank_b[*y]);
            if da != db {
                reversals.push(((*x).clone(), (*y).clone()));
            }
        }
    }
    Ok(RankingComparison {
        criterion_a: criterion_a.to_string(),
        criterion_b: criterion_b.to_string(),
        rank_a,
        rank_b,
        ties_a,
        ties_b,
        reversals,
    })
}
