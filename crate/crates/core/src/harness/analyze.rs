//! Correlation analysis over a metrics CSV: pure function of the file, no
//! backend involved. Emits fits as JSON, one scatter SVG per (model,
//! metric), and a slope-sign summary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::correlation::{
    build_points, classify_sign, fit_line, minmax_normalize, scatter_svg, CorrelationSign,
    MetricKind, PairingExclusion, RegressionFit, ScoreGroup,
};
use crate::ingest::{BenchKind, BenchmarkName};
use crate::metrics::{read_csv, MetricsRow};
use crate::model::Strategy;

use super::{io_err, AnalysisConfig, HarnessError};

/// One fitted line with its classification and provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub model: String,
    pub metric: MetricKind,
    pub sign: CorrelationSign,
    pub neutral_band: f64,
    /// Benchmarks whose scores were all equal before normalization.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate_groups: Vec<String>,
    /// Strategies present on only one side of a pairing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclusions: Vec<PairingExclusion>,
    pub fit: RegressionFit,
}

#[derive(Debug)]
pub struct AnalysisOutcome {
    pub fits: Vec<FitReport>,
    pub fits_path: PathBuf,
    pub plot_paths: Vec<PathBuf>,
    /// Accuracy-metric slope sign per model.
    pub summary: Vec<(String, CorrelationSign)>,
}

/// Read the metrics CSV, group the "averaged" rows by (model, benchmark,
/// metric), normalize, pair adversarial with OOD benchmarks, and fit one
/// line per (model, metric).
pub fn cmd_analyze(
    csv_path: &Path,
    settings: &AnalysisConfig,
    out_dir: &Path,
) -> Result<AnalysisOutcome, HarnessError> {
    let file = std::fs::File::open(csv_path).map_err(|e| io_err(csv_path, e))?;
    let rows = read_csv(file).map_err(|e| HarnessError::Schema(e.to_string()))?;
    analyze_rows(&rows, settings, out_dir)
}

pub(crate) fn analyze_rows(
    rows: &[MetricsRow],
    settings: &AnalysisConfig,
    out_dir: &Path,
) -> Result<AnalysisOutcome, HarnessError> {
    let overall: Vec<&MetricsRow> = rows
        .iter()
        .filter(|r| r.group == "averaged" && r.averaging == settings.averaging)
        .collect();
    if overall.is_empty() {
        return Err(HarnessError::Schema(format!(
            "no rows with group=averaged and averaging={}",
            settings.averaging
        )));
    }

    // (model, benchmark) → strategy → row
    let mut by_model: BTreeMap<String, BTreeMap<BenchmarkName, BTreeMap<Strategy, &MetricsRow>>> =
        BTreeMap::new();
    for row in &overall {
        let benchmark: BenchmarkName = row
            .benchmark
            .parse()
            .map_err(|e| HarnessError::Schema(format!("column benchmark: {e}")))?;
        by_model
            .entry(row.model.clone())
            .or_default()
            .entry(benchmark)
            .or_default()
            .insert(row.strategy, row);
    }

    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let plots_dir = out_dir.join("plots");
    std::fs::create_dir_all(&plots_dir).map_err(|e| io_err(&plots_dir, e))?;

    let mut fits = Vec::new();
    let mut plot_paths = Vec::new();
    let mut summary = Vec::new();
    for (model, benches) in &by_model {
        for metric in MetricKind::ALL {
            let mut adv_groups = Vec::new();
            let mut ood_groups = Vec::new();
            let mut degenerate_groups = Vec::new();
            for (benchmark, strategies) in benches {
                let scores: BTreeMap<Strategy, f64> = strategies
                    .iter()
                    .map(|(s, row)| {
                        let value = match metric {
                            MetricKind::Accuracy => row.accuracy,
                            MetricKind::Precision => row.precision,
                            MetricKind::Recall => row.recall,
                            MetricKind::F1 => row.f1,
                        };
                        (*s, value)
                    })
                    .collect();
                let group = ScoreGroup::new(model.clone(), *benchmark, metric, scores)?;
                let normalized = minmax_normalize(&group);
                if normalized.degenerate {
                    degenerate_groups.push(benchmark.as_str().to_string());
                }
                match benchmark.kind() {
                    BenchKind::Adversarial => adv_groups.push(normalized),
                    BenchKind::Ood => ood_groups.push(normalized),
                }
            }
            if adv_groups.is_empty() || ood_groups.is_empty() {
                return Err(HarnessError::Schema(format!(
                    "model {model}: need at least one adversarial and one OOD benchmark to pair"
                )));
            }

            let points = build_points(&adv_groups, &ood_groups, settings.axis_convention)?;
            let fit = fit_line(&points)?;
            let sign = classify_sign(&fit, settings.neutral_band);
            if metric == MetricKind::Accuracy {
                summary.push((model.clone(), sign));
            }

            let svg = scatter_svg(&fit, &format!("{model} — {metric}"));
            let plot_path = plots_dir.join(format!("{}-{metric}.svg", sanitize(model)));
            std::fs::write(&plot_path, svg).map_err(|e| io_err(&plot_path, e))?;
            plot_paths.push(plot_path);

            fits.push(FitReport {
                model: model.clone(),
                metric,
                sign,
                neutral_band: settings.neutral_band,
                degenerate_groups,
                exclusions: points.exclusions.clone(),
                fit,
            });
        }
    }

    let fits_path = out_dir.join("fits.json");
    std::fs::write(&fits_path, serde_json::to_vec_pretty(&fits)?)
        .map_err(|e| io_err(&fits_path, e))?;

    Ok(AnalysisOutcome {
        fits,
        fits_path,
        plot_paths,
        summary,
    })
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
