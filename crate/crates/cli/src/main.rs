use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tfeval::engine::AUC_CRITERION;
use tfeval::grid_io::load_manifest;
use tfeval::report::{emit_reports, load_result};
use tfeval::synth::{generate_study, StudySpec};
use tfeval::{evaluate_study, Comparator, Error, EvalConfig, StrataBounds, StudyResult, ThresholdGrid};

const EXIT_VALIDATION: u8 = 1;
const EXIT_IO: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "tfeval", version, about = "Threshold-free evaluation of attribution maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ComparatorArg {
    Inclusive,
    Exclusive,
}

impl From<ComparatorArg> for Comparator {
    fn from(c: ComparatorArg) -> Self {
        match c {
            ComparatorArg::Inclusive => Comparator::Inclusive,
            ComparatorArg::Exclusive => Comparator::Exclusive,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate every method of a study manifest and write the reports.
    Evaluate {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Uniform grid as lo:hi:n.
        #[arg(long, value_parser = parse_thresholds)]
        thresholds: Option<ThresholdGrid<f64>>,
        /// Explicit small/large size boundaries in pixels, as lower,upper.
        #[arg(long, value_parser = parse_bounds)]
        strata_bounds: Option<(f64, f64)>,
        #[arg(long, default_value_t = tfeval::stats::DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = tfeval::stats::DEFAULT_CI_LEVEL)]
        ci_level: f64,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, value_enum, default_value_t = ComparatorArg::Inclusive)]
        comparator: ComparatorArg,
        #[arg(long, default_value_t = tfeval::grid_io::DEFAULT_MASK_THRESHOLD)]
        mask_threshold: u8,
    },
    /// Generate a synthetic study from a JSON description.
    Synth {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the description.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print mean AUC-IoU of each method across one or more study results.
    Compare {
        #[arg(required = true)]
        results: Vec<PathBuf>,
    },
    /// Rank the methods of a study result by one criterion.
    Rank {
        result: PathBuf,
        /// `auc` or `iou@<tau>` with tau on the evaluation grid.
        #[arg(long, default_value = "auc")]
        criterion: String,
    },
}

fn parse_thresholds(s: &str) -> Result<ThresholdGrid<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else {
        return Err(format!("expected lo:hi:n, got {s:?}"));
    };
    let lo: f64 = lo.parse().map_err(|e| format!("bad lower threshold: {e}"))?;
    let hi: f64 = hi.parse().map_err(|e| format!("bad upper threshold: {e}"))?;
    let n: usize = n.parse().map_err(|e| format!("bad threshold count: {e}"))?;
    ThresholdGrid::uniform(lo, hi, n).map_err(|e| e.to_string())
}

fn parse_bounds(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected lower,upper, got {s:?}"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("bad lower bound: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("bad upper bound: {e}"))?;
    Ok((a, b))
}

fn criterion_scores(result: &StudyResult, criterion: &str) -> Result<BTreeMap<String, f64>, Error> {
    if criterion == "auc" || criterion == AUC_CRITERION {
        return Ok(result.auc_means());
    }
    let tau = criterion
        .strip_prefix("iou@")
        .and_then(|t| t.parse::<f64>().ok())
        .ok_or_else(|| Error::Validation(format!("unknown criterion {criterion:?}")))?;
    result
        .iou_means_at(tau)
        .ok_or_else(|| Error::Validation(format!("threshold {tau} is not on the evaluation grid")))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Evaluate {
            manifest,
            out,
            thresholds,
            strata_bounds,
            alpha,
            ci_level,
            workers,
            comparator,
            mask_threshold,
        } => {
            let manifest = load_manifest(&manifest)?;
            let config = EvalConfig {
                thresholds: thresholds.unwrap_or_default(),
                alpha,
                ci_level,
                strata: strata_bounds
                    .map(|(lower, upper)| StrataBounds::Explicit { lower, upper })
                    .unwrap_or_default(),
                comparator: comparator.into(),
                mask_threshold,
                workers,
                ..EvalConfig::default()
            };
            let result = evaluate_study(&manifest, &config)?;
            let bundle = emit_reports(&result, &out)?;
            println!(
                "evaluated {} methods on {} images",
                result.methods.len(),
                result.image_ids.len()
            );
            for p in [&bundle.report_path, &bundle.json_path, &bundle.curves_path] {
                println!("wrote {}", p.display());
            }
        }
        Command::Synth { spec, out, seed } => {
            let text = fs::read_to_string(&spec).map_err(|e| Error::Io {
                path: spec.clone(),
                source: e,
            })?;
            let mut study: StudySpec = serde_json::from_str(&text).map_err(|e| Error::Json {
                context: spec.display().to_string(),
                source: e,
            })?;
            if let Some(seed) = seed {
                study.seed = seed;
            }
            let doc = generate_study(&study, &out)?;
            println!(
                "wrote {} images x {} methods to {}",
                doc.images.len(),
                doc.methods.len(),
                out.display()
            );
        }
        Command::Compare { results } => {
            let loaded = results
                .iter()
                .map(load_result)
                .collect::<Result<Vec<_>, _>>()?;
            let mut methods: Vec<&str> = Vec::new();
            for r in &loaded {
                for m in &r.methods {
                    if !methods.contains(&m.as_str()) {
                        methods.push(m);
                    }
                }
            }
            let names: Vec<String> = loaded.iter().map(|r| r.study_name.clone()).collect();
            println!("| Method | {} |", names.join(" | "));
            println!("|{}", " --- |".repeat(names.len() + 1));
            for m in methods {
                let cells: Vec<String> = loaded
                    .iter()
                    .map(|r| r.method(m).map_or_else(|| "-".to_string(), |x| format!("{:.4}", x.auc_mean)))
                    .collect();
                println!("| {m} | {} |", cells.join(" | "));
            }
        }
        Command::Rank { result, criterion } => {
            let result = load_result(&result)?;
            let scores = criterion_scores(&result, &criterion)?;
            let mut order: Vec<(&String, f64)> = scores.iter().map(|(m, &s)| (m, s)).collect();
            order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
            let label = if criterion == "auc" { AUC_CRITERION.to_string() } else { criterion };
            println!("rank\tmethod\t{label}");
            for (i, (m, s)) in order.into_iter().enumerate() {
                println!("{}\t{m}\t{s:.4}", i + 1);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { EXIT_IO } else { EXIT_VALIDATION })
        }
    }
}
