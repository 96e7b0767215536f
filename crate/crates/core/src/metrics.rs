//! Threshold sweep metrics: min-max normalization, binarization, IoU,
//! IoU curves over a threshold grid and their normalized area.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_io::{AttributionMap, BinaryGrid, GroundTruthMask};
use crate::scalar::Scalar;

/// Tolerance used when looking a threshold up in a grid.
pub const TAU_LOOKUP_EPS: f64 = 1e-9;

/// Strictly increasing thresholds in the open interval (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct ThresholdGrid<S = f64> {
    taus: Vec<S>,
}

impl<S: Scalar> Default for ThresholdGrid<S> {
    /// 0.05, 0.10, ..., 0.95.
    fn default() -> Self {
        Self {
            taus: (1..=19).map(|k| S::of(k as f64) / S::of(20.0)).collect(),
        }
    }
}

impl<S: Scalar> ThresholdGrid<S> {
    pub fn new(taus: Vec<S>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::Domain("threshold grid is empty".into()));
        }
        if let Some(t) = taus.iter().find(|&&t| !(t > S::zero() && t < S::one())) {
            return Err(Error::Domain(format!("threshold {t} outside (0, 1)")));
        }
        if taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("thresholds must be strictly increasing".into()));
        }
        Ok(Self { taus })
    }

    /// `n` evenly spaced thresholds from `lo` to `hi` inclusive.
    pub fn uniform(lo: S, hi: S, n: usize) -> Result<Self> {
        match n {
            0 => Err(Error::Domain("threshold count must be positive".into())),
            1 => Self::new(vec![lo]),
            _ => {
                let step_den = S::of((n - 1) as f64);
                let taus = (0..n)
                    .map(|i| {
                        if i == n - 1 {
                            hi
                        } else {
                            lo + (hi - lo) * S::of(i as f64) / step_den
                        }
                    })
                    .collect();
                Self::new(taus)
            }
        }
    }

    pub fn taus(&self) -> &[S] {
        &self.taus
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    /// Index of `tau` in the grid, matched within [`TAU_LOOKUP_EPS`].
    pub fn position(&self, tau: S) -> Option<usize> {
        self.taus
            .iter()
            .position(|&t| (t - tau).abs().as_f64() <= TAU_LOOKUP_EPS)
    }

    pub fn span(&self) -> S {
        self.taus[self.taus.len() - 1] - self.taus[0]
    }
}

/// How a normalized value is compared against a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    /// `value >= tau`
    #[default]
    Inclusive,
    /// `value > tau`
    Exclusive,
}

impl Comparator {
    #[inline]
    pub fn keeps<S: Scalar>(self, value: S, tau: S) -> bool {
        match self {
            Comparator::Inclusive => value >= tau,
            Comparator::Exclusive => value > tau,
        }
    }
}

/// Affine min-max rescale to [0, 1]. A constant map becomes all zeros.
pub fn normalize<S: Scalar>(map: &AttributionMap<S>) -> AttributionMap<S> {
    let values = normalized_values(map.values());
    AttributionMap::new(map.height(), map.width(), values)
        .expect("normalized values are finite")
        .with_ids(map.method_id(), map.image_id())
}

fn normalized_values<S: Scalar>(values: &[S]) -> Vec<S> {
    let (lo, hi) = values
        .iter()
        .fold((S::infinity(), S::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return vec![S::zero(); values.len()];
    }
    let range = hi - lo;
    if range.is_finite() {
        values.iter().map(|&v| ((v - lo) / range).min(S::one())).collect()
    } else {
        // halve first so extreme magnitudes do not overflow the range
        let two = S::of(2.0);
        let range = hi / two - lo / two;
        values
            .iter()
            .map(|&v| ((v / two - lo / two) / range).max(S::zero()).min(S::one()))
            .collect()
    }
}

/// Pixel `p` is kept iff `value(p)` passes `comparator` against `tau`.
pub fn binarize<S: Scalar>(
    map: &AttributionMap<S>,
    tau: S,
    comparator: Comparator,
) -> Result<BinaryGrid> {
    if !(tau > S::zero() && tau < S::one()) {
        return Err(Error::Domain(format!("threshold {tau} outside (0, 1)")));
    }
    BinaryGrid::new(
        map.height(),
        map.width(),
        map.values().iter().map(|&v| comparator.keeps(v, tau)).collect(),
    )
}

/// Exact intersection and union sizes of two binary grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OverlapCounts {
    pub intersection: u64,
    pub union: u64,
}

impl OverlapCounts {
    /// `intersection / union`, or 1 when both sets are empty.
    pub fn iou<S: Scalar>(self) -> S {
        if self.union == 0 {
            S::one()
        } else {
            S::ratio(self.intersection, self.union)
        }
    }
}

pub fn overlap(pred: &BinaryGrid, truth: &BinaryGrid) -> Result<OverlapCounts> {
    if !pred.same_shape(truth) {
        return Err(Error::Validation(format!(
            "prediction is {}x{} but truth is {}x{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    let mut counts = OverlapCounts::default();
    for (&p, &t) in pred.bits().iter().zip(truth.bits()) {
        counts.intersection += u64::from(p && t);
        counts.union += u64::from(p || t);
    }
    Ok(counts)
}

pub fn iou<S: Scalar>(pred: &BinaryGrid, truth: &BinaryGrid) -> Result<S> {
    Ok(overlap(pred, truth)?.iou())
}

/// IoU sampled on a threshold grid, with its area summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct IoUCurve<S = f64> {
    pub grid: ThresholdGrid<S>,
    pub ious: Vec<S>,
    /// Trapezoidal area divided by the grid span; a threshold average in [0, 1].
    pub auc: S,
    /// Plain trapezoidal integral over the grid.
    pub auc_raw: S,
}

impl<S: Scalar> IoUCurve<S> {
    pub fn from_points(grid: ThresholdGrid<S>, ious: Vec<S>) -> Result<Self> {
        let auc = auc_iou(grid.taus(), &ious)?;
        let auc_raw = trapezoid(grid.taus(), &ious)?;
        Ok(Self {
            grid,
            ious,
            auc,
            auc_raw,
        })
    }

    pub fn iou_at(&self, tau: S) -> Option<S> {
        self.grid.position(tau).map(|i| self.ious[i])
    }
}

fn check_points<S: Scalar>(taus: &[S], ious: &[S]) -> Result<()> {
    if taus.len() != ious.len() {
        return Err(Error::Domain(format!(
            "{} thresholds but {} IoU values",
            taus.len(),
            ious.len()
        )));
    }
    if taus.len() < 2 {
        return Err(Error::Domain(
            "area under the curve needs at least 2 points".into(),
        ));
    }
    Ok(())
}

/// Composite trapezoid of `ious` over `taus`.
pub fn trapezoid<S: Scalar>(taus: &[S], ious: &[S]) -> Result<S> {
    check_points(taus, ious)?;
    let half = S::of(0.5);
    Ok(taus
        .windows(2)
        .zip(ious.windows(2))
        .map(|(t, y)| (t[1] - t[0]) * (y[0] + y[1]) * half)
        .sum())
}

/// Trapezoidal area divided by the threshold span, clamped to [0, 1].
///
/// Accumulated as offsets from the first point, so a constant curve returns
/// its value exactly whatever the grid spacing.
pub fn auc_iou<S: Scalar>(taus: &[S], ious: &[S]) -> Result<S> {
    check_points(taus, ious)?;
    let span = taus[taus.len() - 1] - taus[0];
    if span.partial_cmp(&S::zero()) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Domain("threshold span must be positive".into()));
    }
    let base = ious[0];
    let half = S::of(0.5);
    let offset: S = taus
        .windows(2)
        .zip(ious.windows(2))
        .map(|(t, y)| (t[1] - t[0]) / span * ((y[0] - base) + (y[1] - base)) * half)
        .sum();
    Ok((base + offset).max(S::zero()).min(S::one()))
}

/// IoU of `binarize(normalize(map), tau)` against `mask` at every grid threshold.
///
/// Counts all thresholds in one pass: each pixel is bucketed by how many
/// thresholds it passes, then suffix sums give the per-threshold counts.
pub fn iou_curve<S: Scalar>(
    map: &AttributionMap<S>,
    mask: &GroundTruthMask,
    grid: &ThresholdGrid<S>,
    comparator: Comparator,
) -> Result<IoUCurve<S>> {
    if map.height() != mask.height() || map.width() != mask.width() {
        return Err(Error::Validation(format!(
            "map {}x{} does not match mask {}x{} for image {:?}",
            map.height(),
            map.width(),
            mask.height(),
            mask.width(),
            mask.image_id
        )));
    }
    let taus = grid.taus();
    let values = normalized_values(map.values());
    // passes[k] = pixels passing exactly the first k thresholds
    let mut pass_in = vec![0u64; taus.len() + 1];
    let mut pass_out = vec![0u64; taus.len() + 1];
    let mut truth_total = 0u64;
    for (&v, &t) in values.iter().zip(mask.grid.bits()) {
        let k = taus.partition_point(|&tau| comparator.keeps(v, tau));
        if t {
            pass_in[k] += 1;
            truth_total += 1;
        } else {
            pass_out[k] += 1;
        }
    }
    let mut ious = vec![S::zero(); taus.len()];
    let (mut inter, mut pred_out) = (0u64, 0u64);
    for i in (0..taus.len()).rev() {
        inter += pass_in[i + 1];
        pred_out += pass_out[i + 1];
        ious[i] = OverlapCounts {
            intersection: inter,
            union: truth_total + pred_out,
        }
        .iou();
    }
    IoUCurve::from_points(grid.clone(), ious)
}
