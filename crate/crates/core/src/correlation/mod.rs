//! Robustness-correlation analysis: normalize strategy scores per benchmark,
//! pair adversarial and OOD points, fit least-squares lines, classify the
//! slope sign.
//!
//! The slope of the best-fit line over paired normalized scores is the
//! correlation coefficient here — not Pearson's r.

mod svg;

pub use svg::scatter_svg;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ingest::BenchmarkName;
use crate::model::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Accuracy,
    Precision,
    Recall,
    F1,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::Accuracy,
        MetricKind::Precision,
        MetricKind::Recall,
        MetricKind::F1,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Precision => "precision",
            MetricKind::Recall => "recall",
            MetricKind::F1 => "f1",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Strategy scores for one (model, benchmark, metric) slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreGroup {
    pub model: String,
    pub benchmark: BenchmarkName,
    pub metric: MetricKind,
    pub scores: BTreeMap<Strategy, f64>,
    /// Set when all scores were equal and min-max collapsed to 0.5.
    #[serde(default)]
    pub degenerate: bool,
}

impl ScoreGroup {
    pub fn new(
        model: impl Into<String>,
        benchmark: BenchmarkName,
        metric: MetricKind,
        scores: BTreeMap<Strategy, f64>,
    ) -> Result<Self, CorrelationError> {
        if scores.len() < 2 {
            return Err(CorrelationError::TooFewStrategies {
                benchmark: benchmark.as_str().to_string(),
                found: scores.len(),
            });
        }
        for (strategy, value) in &scores {
            if !(0.0..=1.0).contains(value) {
                return Err(CorrelationError::ScoreOutOfRange {
                    strategy: *strategy,
                    value: *value,
                });
            }
        }
        Ok(ScoreGroup {
            model: model.into(),
            benchmark,
            metric,
            scores,
            degenerate: false,
        })
    }
}

/// Min-max rescale a group's scores: x -> (x - min) / (max - min). When all
/// scores are equal the group is degenerate; every score maps to 0.5 and the
/// flag is set.
pub fn minmax_normalize(group: &ScoreGroup) -> ScoreGroup {
    let min = group.scores.values().copied().fold(f64::INFINITY, f64::min);
    let max = group.scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = group.clone();
    if max > min {
        for value in out.scores.values_mut() {
            *value = (*value - min) / (max - min);
        }
    } else {
        for value in out.scores.values_mut() {
            *value = 0.5;
        }
        out.degenerate = true;
    }
    out
}

/// Which robustness type sits on which axis. The default follows the
/// regression equation's variable list (X = OOD, Y = adversarial); the
/// alternative order is supported because prose and variable list disagree
/// in the source material, and every artifact records its convention.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisConvention {
    #[default]
    OodXAdvY,
    AdvXOodY,
}

impl AxisConvention {
    pub fn as_str(&self) -> &'static str {
        match self {
            AxisConvention::OodXAdvY => "ood-x-adv-y",
            AxisConvention::AdvXOodY => "adv-x-ood-y",
        }
    }

    pub fn x_label(&self) -> &'static str {
        match self {
            AxisConvention::OodXAdvY => "OOD metric (normalized)",
            AxisConvention::AdvXOodY => "adversarial metric (normalized)",
        }
    }

    pub fn y_label(&self) -> &'static str {
        match self {
            AxisConvention::OodXAdvY => "adversarial metric (normalized)",
            AxisConvention::AdvXOodY => "OOD metric (normalized)",
        }
    }
}

impl fmt::Display for AxisConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AxisConvention {
    type Err = CorrelationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "ood-x-adv-y" => Ok(AxisConvention::OodXAdvY),
            "adv-x-ood-y" => Ok(AxisConvention::AdvXOodY),
            other => Err(CorrelationError::UnknownConvention(other.to_string())),
        }
    }
}

/// One paired point with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedPoint {
    pub x: f64,
    pub y: f64,
    pub adv_benchmark: BenchmarkName,
    pub ood_benchmark: BenchmarkName,
    pub strategy: Strategy,
}

/// A strategy present on only one side of a pairing, listed rather than
/// silently dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingExclusion {
    pub strategy: Strategy,
    pub adv_benchmark: BenchmarkName,
    pub ood_benchmark: BenchmarkName,
    pub present_in: crate::ingest::BenchKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    pub points: Vec<PairedPoint>,
    pub exclusions: Vec<PairingExclusion>,
    pub axis_convention: AxisConvention,
}

/// Cross every adversarial benchmark with every OOD benchmark: one point per
/// common strategy, coordinates from the normalized scores under the chosen
/// axis convention.
pub fn build_points(
    adv_groups: &[ScoreGroup],
    ood_groups: &[ScoreGroup],
    convention: AxisConvention,
) -> Result<PointSet, CorrelationError> {
    let mut points = Vec::new();
    let mut exclusions = Vec::new();
    for adv in adv_groups {
        for ood in ood_groups {
            let mut common = 0usize;
            for (strategy, adv_score) in &adv.scores {
                match ood.scores.get(strategy) {
                    Some(ood_score) => {
                        common += 1;
                        let (x, y) = match convention {
                            AxisConvention::OodXAdvY => (*ood_score, *adv_score),
                            AxisConvention::AdvXOodY => (*adv_score, *ood_score),
                        };
                        points.push(PairedPoint {
                            x,
                            y,
                            adv_benchmark: adv.benchmark,
                            ood_benchmark: ood.benchmark,
                            strategy: *strategy,
                        });
                    }
                    None => exclusions.push(PairingExclusion {
                        strategy: *strategy,
                        adv_benchmark: adv.benchmark,
                        ood_benchmark: ood.benchmark,
                        present_in: crate::ingest::BenchKind::Adversarial,
                    }),
                }
            }
            for strategy in ood.scores.keys() {
                if !adv.scores.contains_key(strategy) {
                    exclusions.push(PairingExclusion {
                        strategy: *strategy,
                        adv_benchmark: adv.benchmark,
                        ood_benchmark: ood.benchmark,
                        present_in: crate::ingest::BenchKind::Ood,
                    });
                }
            }
            if common == 0 {
                return Err(CorrelationError::NoCommonStrategies {
                    adv: adv.benchmark.as_str().to_string(),
                    ood: ood.benchmark.as_str().to_string(),
                });
            }
        }
    }
    Ok(PointSet {
        points,
        exclusions,
        axis_convention: convention,
    })
}

/// Least-squares line over paired points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    pub n_points: usize,
    pub points: Vec<PairedPoint>,
    pub axis_convention: AxisConvention,
}

/// Closed-form least squares: slope = Sxy/Sxx, intercept = ȳ − slope·x̄.
pub fn fit_line(set: &PointSet) -> Result<RegressionFit, CorrelationError> {
    let n = set.points.len();
    if n < 2 {
        return Err(CorrelationError::TooFewPoints(n));
    }
    let nf = n as f64;
    let mean_x = set.points.iter().map(|p| p.x).sum::<f64>() / nf;
    let mean_y = set.points.iter().map(|p| p.y).sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for p in &set.points {
        sxx += (p.x - mean_x) * (p.x - mean_x);
        sxy += (p.x - mean_x) * (p.y - mean_y);
    }
    if sxx == 0.0 {
        return Err(CorrelationError::DegenerateX);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let residuals = set
        .points
        .iter()
        .map(|p| p.y - (intercept + slope * p.x))
        .collect();
    Ok(RegressionFit {
        slope,
        intercept,
        residuals,
        n_points: n,
        points: set.points.clone(),
        axis_convention: set.axis_convention,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationSign {
    Positive,
    Neutral,
    Negative,
}

impl fmt::Display for CorrelationSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorrelationSign::Positive => f.write_str("positive"),
            CorrelationSign::Neutral => f.write_str("neutral"),
            CorrelationSign::Negative => f.write_str("negative"),
        }
    }
}

pub const DEFAULT_NEUTRAL_BAND: f64 = 0.1;

/// A slope within the neutral band counts as no correlation; otherwise its
/// sign decides.
pub fn classify_sign(fit: &RegressionFit, neutral_band: f64) -> CorrelationSign {
    if fit.slope.abs() <= neutral_band {
        CorrelationSign::Neutral
    } else if fit.slope > 0.0 {
        CorrelationSign::Positive
    } else {
        CorrelationSign::Negative
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorrelationError {
    #[error("score group for {benchmark} has {found} strategies, need at least 2")]
    TooFewStrategies { benchmark: String, found: usize },
    #[error("score for {strategy} out of [0,1]: {value}")]
    ScoreOutOfRange { strategy: Strategy, value: f64 },
    #[error("no common strategies between {adv} and {ood}")]
    NoCommonStrategies { adv: String, ood: String },
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("x values are all equal, slope undefined")]
    DegenerateX,
    #[error("unknown axis convention: {0}")]
    UnknownConvention(String),
}
