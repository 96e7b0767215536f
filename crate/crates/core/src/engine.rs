//! Study evaluation: per-image IoU curves for every (image, method) pair,
//! then per-method aggregates and the paired statistical analyses.
//!
//! The map phase runs on a rayon pool of configurable size. Its results are
//! gathered in manifest order and every reduction afterwards runs in a fixed
//! order, so the [`StudyResult`] is identical for any worker count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias::{self, CurveTable, RankingComparison, ThresholdBiasTable};
use crate::error::{Error, Result};
use crate::grid_io::{read_grid, read_mask, GroundTruthMask, StudyManifest, DEFAULT_MASK_THRESHOLD};
use crate::metrics::{iou_curve, Comparator, IoUCurve, ThresholdGrid};
use crate::stats::{self, ConfidenceInterval, PairwiseTestResult, ScoreTable};
use crate::stratify::{self, StratifiedResult, Strata, StrataBounds};

pub const AUC_CRITERION: &str = "auc_iou";

pub fn iou_criterion(tau: f64) -> String {
    format!("iou@{tau}")
}

/// Analysis options. Everything except `workers` is echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub thresholds: ThresholdGrid<f64>,
    pub alpha: f64,
    pub ci_level: f64,
    pub strata: StrataBounds,
    pub taus_of_interest: Vec<f64>,
    pub swing_taus: (f64, f64),
    pub comparator: Comparator,
    pub mask_threshold: u8,
    /// Thread count for the map phase; `None` uses rayon's default.
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: ThresholdGrid::default(),
            alpha: stats::DEFAULT_ALPHA,
            ci_level: stats::DEFAULT_CI_LEVEL,
            strata: StrataBounds::Percentile,
            taus_of_interest: bias::DEFAULT_TAUS_OF_INTEREST.to_vec(),
            swing_taus: (bias::SWING_LOW_TAU, bias::SWING_HIGH_TAU),
            comparator: Comparator::Inclusive,
            mask_threshold: DEFAULT_MASK_THRESHOLD,
            workers: None,
        }
    }
}

impl EvalConfig {
    /// Thresholds of interest that lie on the grid, in the given order.
    pub fn reported_taus(&self) -> Vec<f64> {
        self.taus_of_interest
            .iter()
            .copied()
            .filter(|&t| self.thresholds.position(t).is_some())
            .collect()
    }
}

/// One image's curve without the grid, which the study stores once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageCurve {
    pub image_id: String,
    pub ious: Vec<f64>,
    pub auc: f64,
    pub auc_raw: f64,
}

impl ImageCurve {
    pub fn from_curve(image_id: impl Into<String>, curve: IoUCurve<f64>) -> Self {
        Self {
            image_id: image_id.into(),
            ious: curve.ious,
            auc: curve.auc,
            auc_raw: curve.auc_raw,
        }
    }

    pub fn to_curve(&self, grid: &ThresholdGrid<f64>) -> Result<IoUCurve<f64>> {
        IoUCurve::from_points(grid.clone(), self.ious.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEvalResult {
    pub method_id: String,
    /// Manifest order.
    pub per_image: Vec<ImageCurve>,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub auc_raw_mean: f64,
    pub ci: ConfidenceInterval<f64>,
    /// Mean IoU at each grid threshold.
    pub per_tau_mean: Vec<f64>,
    pub per_tau_std: Vec<f64>,
}

/// Mean, n−1 standard deviation and normal CI of the per-image AUCs, plus
/// per-threshold means. Sums run in image-id order.
pub fn aggregate_method(
    method_id: &str,
    per_image: Vec<ImageCurve>,
    ci_level: f64,
) -> Result<MethodEvalResult> {
    if per_image.is_empty() {
        return Err(Error::InsufficientData(format!(
            "method {method_id:?} has no image curves"
        )));
    }
    let mut order: Vec<&ImageCurve> = per_image.iter().collect();
    order.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let n_taus = order[0].ious.len();
    if let Some(c) = order.iter().find(|c| c.ious.len() != n_taus) {
        return Err(Error::Validation(format!(
            "curve for image {:?} has {} points, expected {n_taus}",
            c.image_id,
            c.ious.len()
        )));
    }

    let aucs: Vec<f64> = order.iter().map(|c| c.auc).collect();
    let raws: Vec<f64> = order.iter().map(|c| c.auc_raw).collect();
    let auc_mean = stats::mean(&aucs)?;
    let auc_std = stats::sample_std(&aucs)?;
    let ci = if aucs.len() >= 2 {
        stats::normal_ci_from_summary(auc_mean, auc_std, aucs.len(), ci_level)?
    } else {
        ConfidenceInterval {
            mean: auc_mean,
            half_width: 0.0,
            level: ci_level,
            degenerate: true,
        }
    };
    let mut per_tau_mean = Vec::with_capacity(n_taus);
    let mut per_tau_std = Vec::with_capacity(n_taus);
    for i in 0..n_taus {
        let column: Vec<f64> = order.iter().map(|c| c.ious[i]).collect();
        per_tau_mean.push(stats::mean(&column)?);
        per_tau_std.push(stats::sample_std(&column)?);
    }
    Ok(MethodEvalResult {
        method_id: method_id.to_string(),
        auc_mean,
        auc_std,
        auc_raw_mean: stats::mean(&raws)?,
        ci,
        per_tau_mean,
        per_tau_std,
        per_image,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub tool_version: String,
    pub study_name: String,
    pub manifest_fingerprint: String,
    pub seed: Option<u64>,
    pub config: EvalConfig,
    /// Manifest order.
    pub methods: Vec<String>,
    pub image_ids: Vec<String>,
    /// Source-resolution lesion sizes, aligned with `image_ids`.
    pub image_sizes: Vec<u64>,
    /// Manifest order.
    pub method_results: Vec<MethodEvalResult>,
    pub pairwise: Vec<PairwiseTestResult<f64>>,
    pub threshold_bias: ThresholdBiasTable<f64>,
    pub strata: Strata,
    pub stratified: Vec<StratifiedResult<f64>>,
    /// AUC-IoU against IoU at each reported threshold.
    pub rankings: Vec<RankingComparison>,
}

impl StudyResult {
    pub fn method(&self, method_id: &str) -> Option<&MethodEvalResult> {
        self.method_results.iter().find(|m| m.method_id == method_id)
    }

    pub fn auc_means(&self) -> BTreeMap<String, f64> {
        self.method_results
            .iter()
            .map(|m| (m.method_id.clone(), m.auc_mean))
            .collect()
    }

    /// Mean IoU of every method at grid threshold `tau`.
    pub fn iou_means_at(&self, tau: f64) -> Option<BTreeMap<String, f64>> {
        let i = self.config.thresholds.position(tau)?;
        Some(
            self.method_results
                .iter()
                .map(|m| (m.method_id.clone(), m.per_tau_mean[i]))
                .collect(),
        )
    }

    pub fn auc_table(&self) -> ScoreTable<f64> {
        self.method_results
            .iter()
            .map(|m| {
                let per_image = m.per_image.iter().map(|c| (c.image_id.clone(), c.auc)).collect();
                (m.method_id.clone(), per_image)
            })
            .collect()
    }
}

fn in_image(image_id: &str, method_id: Option<&str>, source: Error) -> Error {
    Error::InImage {
        image_id: image_id.to_string(),
        method_id: method_id.map(str::to_string),
        source: Box::new(source),
    }
}

/// First error in input order, so failures are reported the same way
/// whatever the scheduling.
fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

fn load_masks(manifest: &StudyManifest, config: &EvalConfig) -> Result<Vec<GroundTruthMask>> {
    first_error(
        manifest
            .images
            .par_iter()
            .map(|img| {
                let mut mask = read_mask(&img.mask_path, config.mask_threshold)
                    .map_err(|e| in_image(&img.image_id, None, e))?;
                mask.image_id = img.image_id.clone();
                mask.original_positive_pixels = img.original_positive_pixels;
                Ok(mask)
            })
            .collect(),
    )
}

fn compute_curves(
    manifest: &StudyManifest,
    masks: &[GroundTruthMask],
    config: &EvalConfig,
) -> Result<Vec<Vec<ImageCurve>>> {
    let n_methods = manifest.methods.len();
    let jobs: Vec<(usize, usize)> = (0..n_methods)
        .flat_map(|m| (0..manifest.images.len()).map(move |i| (m, i)))
        .collect();
    let curves = first_error(
        jobs.par_iter()
            .map(|&(m, i)| {
                let img = &manifest.images[i];
                let method = &manifest.methods[m];
                let fail = |e| in_image(&img.image_id, Some(method), e);
                let map = read_grid(&img.grid_paths[m]).map_err(fail)?.cast::<f64>();
                let curve = iou_curve(&map, &masks[i], &config.thresholds, config.comparator)
                    .map_err(fail)?;
                Ok(ImageCurve::from_curve(&img.image_id, curve))
            })
            .collect(),
    )?;
    let mut by_method: Vec<Vec<ImageCurve>> = vec![Vec::new(); n_methods];
    for ((m, _), c) in jobs.into_iter().zip(curves) {
        by_method[m].push(c);
    }
    Ok(by_method)
}

/// Evaluates every (image, method) pair of the manifest and runs the full
/// analysis. Any per-image failure aborts the whole evaluation.
pub fn evaluate_study(manifest: &StudyManifest, config: &EvalConfig) -> Result<StudyResult> {
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::Domain(format!("alpha {} outside (0, 1)", config.alpha)));
    }
    if !(config.ci_level > 0.0 && config.ci_level < 1.0) {
        return Err(Error::Domain(format!(
            "confidence level {} outside (0, 1)",
            config.ci_level
        )));
    }
    if config.thresholds.len() < 2 {
        return Err(Error::Domain("threshold grid needs at least 2 points".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = config.workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Validation(format!("cannot start worker pool: {e}")))?;
    pool.install(|| evaluate_in_pool(manifest, config))
}

fn evaluate_in_pool(manifest: &StudyManifest, config: &EvalConfig) -> Result<StudyResult> {
    let masks = load_masks(manifest, config)?;
    let per_method = compute_curves(manifest, &masks, config)?;

    let method_results = manifest
        .methods
        .iter()
        .zip(per_method)
        .map(|(m, curves)| aggregate_method(m, curves, config.ci_level))
        .collect::<Result<Vec<_>>>()?;

    let result_stub = |method_results: Vec<MethodEvalResult>| StudyResult {
        tool_version: crate::VERSION.to_string(),
        study_name: manifest.study_name.clone(),
        manifest_fingerprint: manifest.fingerprint.clone(),
        seed: manifest.seed,
        config: config.clone(),
        methods: manifest.methods.clone(),
        image_ids: manifest.images.iter().map(|i| i.image_id.clone()).collect(),
        image_sizes: manifest.images.iter().map(|i| i.original_positive_pixels).collect(),
        method_results,
        pairwise: Vec::new(),
        threshold_bias: ThresholdBiasTable {
            rows: Vec::new(),
            n_tests: 0,
            taus_of_interest: Vec::new(),
            swing_taus: config.swing_taus,
        },
        strata: Strata {
            lower_bound: 0.0,
            upper_bound: 0.0,
            source: stratify::BoundarySource::Percentile,
            degenerate: true,
            strata: Vec::new(),
        },
        stratified: Vec::new(),
        rankings: Vec::new(),
    };
    let mut result = result_stub(method_results);

    let scores = result.auc_table();
    result.pairwise = stats::run_pairwise_family(&scores, config.alpha)?;

    let curves: CurveTable<f64> = result
        .method_results
        .iter()
        .map(|m| {
            let per_image = m
                .per_image
                .iter()
                .map(|c| Ok((c.image_id.clone(), c.to_curve(&config.thresholds)?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            Ok((m.method_id.clone(), per_image))
        })
        .collect::<Result<_>>()?;
    let reported = config.reported_taus();
    result.threshold_bias =
        bias::threshold_bias_table(&curves, &reported, config.swing_taus, config.alpha)?;

    let sizes: BTreeMap<String, u64> = manifest
        .images
        .iter()
        .map(|i| (i.image_id.clone(), i.original_positive_pixels))
        .collect();
    result.strata = stratify::strata_for(&sizes, config.strata)?;
    result.stratified = stratify::stratified_performance(&scores, &result.strata)?;

    let auc_means = result.auc_means();
    result.rankings = reported
        .iter()
        .map(|&tau| {
            let at = result.iou_means_at(tau).expect("reported taus lie on the grid");
            bias::ranking_comparison(AUC_CRITERION, &auc_means, &iou_criterion(tau), &at)
        })
        .collect::<Result<_>>()?;
    Ok(result)
}
