//! Lesion-size strata and per-stratum method performance.
//!
//! Images are bucketed by their source-resolution positive-pixel count:
//! `size ≤ lower` is small, `lower < size < upper` medium, `size ≥ upper`
//! large (large takes precedence when the two boundaries coincide).
//! Boundaries default to the 33rd and 67th percentiles of the sizes (linear
//! interpolation between closest ranks) and can be given explicitly.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats::{self, ScoreTable};

pub const LOWER_PERCENTILE: f64 = 33.0;
pub const UPPER_PERCENTILE: f64 = 67.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratumName {
    Small,
    Medium,
    Large,
}

impl StratumName {
    pub const ALL: [StratumName; 3] = [StratumName::Small, StratumName::Medium, StratumName::Large];
}

impl fmt::Display for StratumName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StratumName::Small => "small",
            StratumName::Medium => "medium",
            StratumName::Large => "large",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeStratum {
    pub name: StratumName,
    /// Smallest and largest member sizes; `None` for an empty stratum.
    pub min_size: Option<u64>,
    pub max_size: Option<u64>,
    /// Sorted image ids.
    pub image_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySource {
    Percentile,
    Explicit,
}

/// How stratum boundaries are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrataBounds {
    #[default]
    Percentile,
    Explicit { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strata {
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub source: BoundarySource,
    /// Both boundaries coincide, so the medium stratum is necessarily empty.
    pub degenerate: bool,
    /// Small, medium, large.
    pub strata: Vec<SizeStratum>,
}

impl Strata {
    pub fn total_images(&self) -> usize {
        self.strata.iter().map(|s| s.image_ids.len()).sum()
    }

    pub fn counts(&self) -> [usize; 3] {
        [0, 1, 2].map(|i| self.strata[i].image_ids.len())
    }

    pub fn stratum_of(&self, image_id: &str) -> Option<StratumName> {
        self.strata
            .iter()
            .find(|s| s.image_ids.binary_search_by(|id| id.as_str().cmp(image_id)).is_ok())
            .map(|s| s.name)
    }
}

/// Percentile `q` in [0, 100] of sorted data, interpolating linearly between
/// closest ranks (position `(n − 1) · q / 100`).
pub fn percentile_linear(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::InsufficientData("percentile of an empty sample".into()));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::Domain(format!("percentile {q} outside [0, 100]")));
    }
    let h = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn classify(size: u64, lower: f64, upper: f64) -> StratumName {
    let s = size as f64;
    // large wins when the boundaries coincide
    if s >= upper {
        StratumName::Large
    } else if s <= lower {
        StratumName::Small
    } else {
        StratumName::Medium
    }
}

/// Strata at the 33rd/67th size percentiles.
pub fn compute_strata(sizes: &BTreeMap<String, u64>) -> Result<Strata> {
    if sizes.is_empty() {
        return Err(Error::InsufficientData("no image sizes to stratify".into()));
    }
    let mut sorted: Vec<f64> = sizes.values().map(|&s| s as f64).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lower = percentile_linear(&sorted, LOWER_PERCENTILE)?;
    let upper = percentile_linear(&sorted, UPPER_PERCENTILE)?;
    Ok(build(sizes, lower, upper, BoundarySource::Percentile))
}

/// Strata at caller-supplied boundaries.
pub fn strata_with_bounds(sizes: &BTreeMap<String, u64>, lower: f64, upper: f64) -> Result<Strata> {
    if sizes.is_empty() {
        return Err(Error::InsufficientData("no image sizes to stratify".into()));
    }
    if !(lower.is_finite() && upper.is_finite() && lower <= upper) {
        return Err(Error::Domain(format!(
            "stratum boundaries {lower}, {upper} must be finite and ordered"
        )));
    }
    Ok(build(sizes, lower, upper, BoundarySource::Explicit))
}

pub fn strata_for(sizes: &BTreeMap<String, u64>, bounds: StrataBounds) -> Result<Strata> {
    match bounds {
        StrataBounds::Percentile => compute_strata(sizes),
        StrataBounds::Explicit { lower, upper } => strata_with_bounds(sizes, lower, upper),
    }
}

fn build(sizes: &BTreeMap<String, u64>, lower: f64, upper: f64, source: BoundarySource) -> Strata {
    let strata = StratumName::ALL
        .iter()
        .map(|&name| {
            let members: Vec<(&String, u64)> = sizes
                .iter()
                .filter(|(_, &s)| classify(s, lower, upper) == name)
                .map(|(id, &s)| (id, s))
                .collect();
            SizeStratum {
                name,
                min_size: members.iter().map(|m| m.1).min(),
                max_size: members.iter().map(|m| m.1).max(),
                image_ids: members.into_iter().map(|(id, _)| id.clone()).collect(),
            }
        })
        .collect();
    Strata {
        lower_bound: lower,
        upper_bound: upper,
        source,
        degenerate: lower == upper,
        strata,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct StratumSummary<S = f64> {
    pub name: StratumName,
    pub n: usize,
    pub mean: Option<S>,
    pub std: Option<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct StratifiedResult<S = f64> {
    pub method_id: String,
    pub strata: Vec<StratumSummary<S>>,
    /// Percentage change from the small to the large stratum mean.
    pub improvement: Option<S>,
    /// Least-squares slope of stratum mean against stratum index (0, 1, 2).
    pub trend_slope: Option<S>,
}

/// `(large − small) / small × 100`; `None` unless `small > 0`.
pub fn improvement_percent<S: Scalar>(mean_small: S, mean_large: S) -> Option<S> {
    (mean_small > S::zero()).then(|| (mean_large - mean_small) / mean_small * S::of(100.0))
}

fn trend_slope<S: Scalar>(points: &[(S, S)]) -> Option<S> {
    if points.len() < 2 {
        return None;
    }
    let n = S::of(points.len() as f64);
    let mx = points.iter().map(|p| p.0).sum::<S>() / n;
    let my = points.iter().map(|p| p.1).sum::<S>() / n;
    let sxx: S = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: S = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

pub fn stratified_performance<S: Scalar>(
    scores: &ScoreTable<S>,
    strata: &Strata,
) -> Result<Vec<StratifiedResult<S>>> {
    let total = strata.total_images();
    scores
        .iter()
        .map(|(method, per_image)| {
            if let Some(id) = per_image.keys().find(|id| strata.stratum_of(id).is_none()) {
                return Err(Error::Validation(format!(
                    "image {id:?} scored for {method:?} belongs to no stratum"
                )));
            }
            if per_image.len() != total {
                return Err(Error::Validation(format!(
                    "{method:?} is scored on {} images but the strata hold {total}",
                    per_image.len()
                )));
            }
            let summaries = strata
                .strata
                .iter()
                .map(|s| {
                    let values: Vec<S> = s.image_ids.iter().map(|id| per_image[id]).collect();
                    Ok(StratumSummary {
                        name: s.name,
                        n: values.len(),
                        mean: stats::mean(&values).ok(),
                        std: stats::sample_std(&values).ok(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let improvement = match (summaries[0].mean, summaries[2].mean) {
                (Some(small), Some(large)) => improvement_percent(small, large),
                _ => None,
            };
            let points: Vec<(S, S)> = summaries
                .iter()
                .enumerate()
                .filter_map(|(i, s)| s.mean.map(|m| (S::of(i as f64), m)))
                .collect();
            Ok(StratifiedResult {
                method_id: method.clone(),
                strata: summaries,
                improvement,
                trend_slope: trend_slope(&points),
            })
        })
        .collect()
}
