//! Report emission: Markdown tables, the machine-readable study result and
//! the per-threshold curve data.
//!
//! The Markdown is a pure function of the [`StudyResult`], so re-rendering a
//! parsed `study_result.json` reproduces `report.md` byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::engine::{StudyResult, AUC_CRITERION};
use crate::error::{Error, Result};
use crate::stratify::StratumName;

pub const REPORT_FILE: &str = "report.md";
pub const RESULT_FILE: &str = "study_result.json";
pub const CURVES_FILE: &str = "curves.csv";

/// The four report tables as Markdown fragments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportTables {
    pub performance: String,
    pub significance: String,
    pub size_strata: String,
    pub threshold_bias: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportBundle {
    pub tables: ReportTables,
    pub markdown: String,
    pub json: String,
    pub curves_csv: String,
    pub report_path: PathBuf,
    pub json_path: PathBuf,
    pub curves_path: PathBuf,
}

fn score(x: f64) -> String {
    format!("{x:.4}")
}

fn percent(x: Option<f64>) -> String {
    x.map_or_else(|| "undefined".to_string(), |v| format!("{v:.1}"))
}

fn p_value(p: f64) -> String {
    if p >= 1e-4 {
        format!("{p:.4}")
    } else {
        format!("{p:.2e}")
    }
}

/// Stars keyed to a corrected p-value.
pub fn significance_stars(p_adjusted: f64) -> &'static str {
    if p_adjusted < 0.001 {
        "***"
    } else if p_adjusted < 0.01 {
        "**"
    } else if p_adjusted < 0.05 {
        "*"
    } else {
        "ns"
    }
}

fn row(cells: &[String]) -> String {
    format!("| {} |\n", cells.join(" | "))
}

fn header(cells: &[&str]) -> String {
    let mut s = row(&cells.iter().map(|c| c.to_string()).collect::<Vec<_>>());
    s.push_str(&row(&vec!["---".to_string(); cells.len()]));
    s
}

fn tau_label(tau: f64) -> String {
    format!("IoU@{tau}")
}

fn performance_table(result: &StudyResult) -> String {
    let taus = result.config.reported_taus();
    let level = (result.config.ci_level * 100.0).round();
    let mut cols = vec![
        "Rank".to_string(),
        "Method".to_string(),
        "AUC-IoU".to_string(),
        format!("{level}% CI ±"),
        "Std".to_string(),
    ];
    cols.extend(taus.iter().map(|&t| tau_label(t)));
    let mut out = header(&cols.iter().map(String::as_str).collect::<Vec<_>>());

    let mut order: Vec<_> = result.method_results.iter().collect();
    order.sort_by(|a, b| {
        b.auc_mean
            .partial_cmp(&a.auc_mean)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.method_id.cmp(&b.method_id))
    });
    for (rank, m) in order.into_iter().enumerate() {
        let ci = if m.ci.degenerate {
            "undefined".to_string()
        } else {
            score(m.ci.half_width)
        };
        let mut cells = vec![
            (rank + 1).to_string(),
            m.method_id.clone(),
            score(m.auc_mean),
            ci,
            score(m.auc_std),
        ];
        for &t in &taus {
            let i = result.config.thresholds.position(t).expect("reported taus lie on the grid");
            cells.push(score(m.per_tau_mean[i]));
        }
        out.push_str(&row(&cells));
    }
    out
}

fn significance_table(result: &StudyResult) -> String {
    let mut out = header(&[
        "Method A",
        "Method B",
        "n",
        "W+",
        "Median diff",
        "p (raw)",
        "p (Holm)",
        "Significance",
    ]);
    for t in &result.pairwise {
        out.push_str(&row(&[
            t.method_a.clone(),
            t.method_b.clone(),
            (t.n_pairs - t.n_zero_dropped).to_string(),
            t.w_statistic.map_or_else(|| "undefined".to_string(), |w| format!("{w:.1}")),
            score(t.effect_size),
            p_value(t.p_raw),
            p_value(t.p_adjusted),
            significance_stars(t.p_adjusted).to_string(),
        ]));
    }
    out
}

fn size_strata_table(result: &StudyResult) -> String {
    let strata = &result.strata;
    let cols: Vec<String> = ["Method".to_string()]
        .into_iter()
        .chain(strata.strata.iter().map(|s| format!("{} (n={})", s.name, s.image_ids.len())))
        .chain(["Improvement (%)".to_string()])
        .collect();
    let mut out = header(&cols.iter().map(String::as_str).collect::<Vec<_>>());
    for r in &result.stratified {
        let mut cells = vec![r.method_id.clone()];
        for name in StratumName::ALL {
            let mean = r.strata.iter().find(|s| s.name == name).and_then(|s| s.mean);
            cells.push(mean.map_or_else(|| "undefined".to_string(), score));
        }
        cells.push(percent(r.improvement));
        out.push_str(&row(&cells));
    }
    out
}

fn threshold_bias_table(result: &StudyResult) -> String {
    let table = &result.threshold_bias;
    let mut cols = vec!["Method".to_string(), "AUC-IoU".to_string()];
    for &t in &table.taus_of_interest {
        cols.push(tau_label(t));
        cols.push(format!("Rel. diff @{t} (%)"));
    }
    let (lo, hi) = table.swing_taus;
    cols.push(format!("Swing {lo}/{hi} (pp)"));
    let mut out = header(&cols.iter().map(String::as_str).collect::<Vec<_>>());
    for r in &table.rows {
        let mut cells = vec![r.method_id.clone(), score(r.auc_mean)];
        for &t in &table.taus_of_interest {
            match r.point_at(t) {
                Some(p) => {
                    cells.push(score(p.iou_mean));
                    cells.push(format!("{} {}", percent(p.rel_diff), significance_stars(p.p_adjusted)));
                }
                None => cells.extend(["undefined".to_string(), "undefined".to_string()]),
            }
        }
        cells.push(percent(r.swing));
        out.push_str(&row(&cells));
    }
    out
}

pub fn render_tables(result: &StudyResult) -> ReportTables {
    ReportTables {
        performance: performance_table(result),
        significance: significance_table(result),
        size_strata: size_strata_table(result),
        threshold_bias: threshold_bias_table(result),
    }
}

fn metadata(result: &StudyResult) -> String {
    let c = &result.config;
    let taus = c.thresholds.taus();
    let mut s = String::new();
    let _ = writeln!(s, "- Tool version: {}", result.tool_version);
    let _ = writeln!(
        s,
        "- Seed: {}",
        result.seed.map_or_else(|| "none".to_string(), |v| v.to_string())
    );
    let _ = writeln!(s, "- Manifest fingerprint: `{}`", result.manifest_fingerprint);
    let _ = writeln!(s, "- Images: {}", result.image_ids.len());
    let _ = writeln!(s, "- Methods: {}", result.methods.join(", "));
    let _ = writeln!(
        s,
        "- Thresholds: {} points from {} to {}",
        taus.len(),
        taus[0],
        taus[taus.len() - 1]
    );
    let _ = writeln!(s, "- Comparator: {:?}, mask threshold: {}", c.comparator, c.mask_threshold);
    let _ = writeln!(s, "- Alpha: {}, CI level: {}", c.alpha, c.ci_level);
    let _ = writeln!(
        s,
        "- Size strata bounds ({:?}): {} / {} pixels",
        result.strata.source, result.strata.lower_bound, result.strata.upper_bound
    );
    s
}

fn rankings(result: &StudyResult) -> String {
    let mut s = String::new();
    for r in &result.rankings {
        let pairs = if r.reversals.is_empty() {
            "none".to_string()
        } else {
            r.reversals
                .iter()
                .map(|(a, b)| format!("{a}/{b}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let _ = writeln!(s, "- {} vs {}: {pairs}", r.criterion_a, r.criterion_b);
    }
    if s.is_empty() {
        s.push_str("- no thresholds of interest on the grid\n");
    }
    s
}

pub fn render_markdown(result: &StudyResult) -> String {
    let t = render_tables(result);
    let mut s = String::new();
    let _ = writeln!(s, "# {}\n", result.study_name);
    let _ = writeln!(s, "{}", metadata(result));
    let _ = writeln!(s, "## Performance\n\n{}", t.performance);
    let _ = writeln!(
        s,
        "## Pairwise comparisons ({} tests, Holm-corrected)\n\n{}",
        result.pairwise.len(),
        t.significance
    );
    let _ = writeln!(s, "## Size strata ({})\n\n{}", AUC_CRITERION, t.size_strata);
    let _ = writeln!(
        s,
        "## Threshold bias ({} tests, Holm-corrected)\n\n{}",
        result.threshold_bias.n_tests, t.threshold_bias
    );
    let _ = write!(s, "## Ranking reversals\n\n{}", rankings(result));
    s
}

pub fn result_json(result: &StudyResult) -> Result<String> {
    let mut s = serde_json::to_string_pretty(result).map_err(|e| Error::json("study result", e))?;
    s.push('\n');
    Ok(s)
}

/// Long-format `method,tau,mean_iou,std_iou` with CRLF line endings.
pub fn curves_csv(result: &StudyResult) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(["method", "tau", "mean_iou", "std_iou"])?;
    for m in &result.method_results {
        for (i, tau) in result.config.thresholds.taus().iter().enumerate() {
            w.write_record([
                m.method_id.clone(),
                tau.to_string(),
                m.per_tau_mean[i].to_string(),
                m.per_tau_std[i].to_string(),
            ])?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Csv(csv::Error::from(e.into_error())))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(format!("curve table is not UTF-8: {e}")))
}

pub fn load_result(path: impl AsRef<Path>) -> Result<StudyResult> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Writes `report.md`, `study_result.json` and `curves.csv` into `out_dir`,
/// creating it if needed.
pub fn emit_reports(result: &StudyResult, out_dir: impl AsRef<Path>) -> Result<ReportBundle> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let bundle = ReportBundle {
        tables: render_tables(result),
        markdown: render_markdown(result),
        json: result_json(result)?,
        curves_csv: curves_csv(result)?,
        report_path: out_dir.join(REPORT_FILE),
        json_path: out_dir.join(RESULT_FILE),
        curves_path: out_dir.join(CURVES_FILE),
    };
    for (path, body) in [
        (&bundle.report_path, &bundle.markdown),
        (&bundle.json_path, &bundle.json),
        (&bundle.curves_path, &bundle.curves_csv),
    ] {
        fs::write(path, body).map_err(|e| Error::io(path, e))?;
    }
    Ok(bundle)
}
