//! Threshold-free evaluation of feature-attribution maps against binary
//! ground-truth masks.
//!
//! Attribution grids are min-max normalized, binarized on a grid of
//! thresholds and scored by IoU at each one. The area under that curve
//! (AUC-IoU) summarizes a method without committing to a single threshold.
//! On top of the per-image curves the crate provides paired Wilcoxon
//! signed-rank tests with Holm correction, threshold-bias diagnostics,
//! size-stratified summaries, a seeded synthetic data generator and report
//! emission.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); study
//! evaluation runs in `f64`.

pub mod bias;
pub mod engine;
pub mod error;
pub mod grid_io;
pub mod metrics;
pub mod report;
pub mod scalar;
pub mod stats;
pub mod stratify;
pub mod synth;

pub use bias::{
    performance_swing, ranking_comparison, relative_difference, threshold_bias_table,
    RankingComparison, ThresholdBiasRow, ThresholdBiasTable,
};
pub use engine::{aggregate_method, evaluate_study, EvalConfig, MethodEvalResult, StudyResult};
pub use error::{Error, Result};
pub use grid_io::{
    load_manifest, read_grid, read_mask, write_grid, AttributionMap, BinaryGrid, GroundTruthMask,
    StudyManifest,
};
pub use metrics::{auc_iou, binarize, iou, iou_curve, normalize, Comparator, IoUCurve, ThresholdGrid};
pub use report::{emit_reports, load_result, render_markdown, ReportBundle};
pub use scalar::Scalar;
pub use stats::{
    holm_bonferroni, normal_ci, run_pairwise_family, wilcoxon_signed_rank, PairwiseTestResult,
};
pub use stratify::{compute_strata, stratified_performance, StrataBounds};
pub use synth::{generate, generate_study, StudySpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type AttributionMap32 = AttributionMap<f32>;
pub type AttributionMap64 = AttributionMap<f64>;
pub type ThresholdGrid32 = ThresholdGrid<f32>;
pub type ThresholdGrid64 = ThresholdGrid<f64>;
pub type IoUCurve32 = IoUCurve<f32>;
pub type IoUCurve64 = IoUCurve<f64>;
