//! Accuracy, precision, recall, F1 per (model, strategy, benchmark) and per
//! group (attack type / GLUE task).
//!
//! Counting is one-vs-rest per label. Unparseable predictions count as a
//! false negative for the gold label and are tallied separately; they never
//! produce a true or false positive. Degenerate classes (no support, no
//! predictions) score 0/0 := 0 and stay in the macro mean.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{LabelId, ParsedLabel, RunRecord, Sample, Strategy, TaskKind, TaskRegistry};

/// One prediction joined with its sample's gold label and grouping tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoredSample {
    pub gold: LabelId,
    pub prediction: ParsedLabel,
    pub group: String,
    pub task: TaskKind,
}

/// Zip a benchmark's samples with the records a strategy produced for them.
/// Order and ids must line up one-to-one.
pub fn align(samples: &[Sample], records: &[RunRecord]) -> Result<Vec<ScoredSample>, MetricsError> {
    if samples.len() != records.len() {
        return Err(MetricsError::Misaligned(format!(
            "{} samples vs {} records",
            samples.len(),
            records.len()
        )));
    }
    samples
        .iter()
        .zip(records)
        .map(|(s, r)| {
            if s.id != r.sample_id {
                return Err(MetricsError::Misaligned(format!(
                    "sample {} paired with record {}",
                    s.id, r.sample_id
                )));
            }
            Ok(ScoredSample {
                gold: s.gold.clone(),
                prediction: r.prediction.label.clone(),
                group: s.group.clone(),
                task: s.task,
            })
        })
        .collect()
}

/// Per-label TP/FP/FN counts over a declared label space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTable {
    labels: Vec<LabelId>,
    tp: Vec<usize>,
    fp: Vec<usize>,
    fn_: Vec<usize>,
    total: usize,
    unparseable: usize,
}

/// Counts for one label, one-vs-rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelStats<'a> {
    pub label: &'a LabelId,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl LabelStats<'_> {
    /// Number of records whose gold label this is.
    pub fn support(&self) -> usize {
        self.tp + self.fn_
    }
}

impl ConfusionTable {
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn unparseable(&self) -> usize {
        self.unparseable
    }

    pub fn correct(&self) -> usize {
        self.tp.iter().sum()
    }

    pub fn stats(&self) -> impl Iterator<Item = LabelStats<'_>> {
        self.labels.iter().enumerate().map(|(i, label)| LabelStats {
            label,
            tp: self.tp[i],
            fp: self.fp[i],
            fn_: self.fn_[i],
        })
    }
}

/// Count one-vs-rest confusion over `labels` for the scored records.
pub fn confusion(scored: &[ScoredSample], labels: &[LabelId]) -> Result<ConfusionTable, MetricsError> {
    if scored.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    let index: BTreeMap<&LabelId, usize> =
        labels.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let mut table = ConfusionTable {
        labels: labels.to_vec(),
        tp: vec![0; labels.len()],
        fp: vec![0; labels.len()],
        fn_: vec![0; labels.len()],
        total: scored.len(),
        unparseable: 0,
    };
    for s in scored {
        let gold = *index.get(&s.gold).ok_or_else(|| {
            MetricsError::GoldOutsideSpace(s.gold.as_str().to_string())
        })?;
        match &s.prediction {
            ParsedLabel::Unparseable => {
                table.unparseable += 1;
                table.fn_[gold] += 1;
            }
            ParsedLabel::Label(pred) => match index.get(pred) {
                Some(&p) if p == gold => table.tp[gold] += 1,
                Some(&p) => {
                    table.fp[p] += 1;
                    table.fn_[gold] += 1;
                }
                // Prediction outside the declared space behaves like a miss.
                None => {
                    table.unparseable += 1;
                    table.fn_[gold] += 1;
                }
            },
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Support-weighted mean of per-label metrics.
    Weighted,
    /// Unweighted mean over the declared label space.
    Macro,
}

impl Averaging {
    pub const BOTH: [Averaging; 2] = [Averaging::Weighted, Averaging::Macro];

    pub fn as_str(&self) -> &'static str {
        match self {
            Averaging::Weighted => "weighted",
            Averaging::Macro => "macro",
        }
    }
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Averaging {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "weighted" => Ok(Averaging::Weighted),
            "macro" => Ok(Averaging::Macro),
            other => Err(MetricsError::UnknownAveraging(other.to_string())),
        }
    }
}

/// Accuracy/precision/recall/F1 for one (model, strategy, benchmark) slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsVector {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub averaging: Averaging,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub support: usize,
    pub unparseable: usize,
}

/// Aggregate a confusion table into a metrics vector.
pub fn score(table: &ConfusionTable, averaging: Averaging) -> MetricsVector {
    let total = table.total as f64;
    let accuracy = table.correct() as f64 / total;

    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut f1 = 0.0;
    let n_labels = table.labels.len() as f64;
    for stats in table.stats() {
        let p = ratio(stats.tp, stats.tp + stats.fp);
        let r = ratio(stats.tp, stats.tp + stats.fn_);
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        let weight = match averaging {
            Averaging::Weighted => stats.support() as f64 / total,
            Averaging::Macro => 1.0 / n_labels,
        };
        precision += weight * p;
        recall += weight * r;
        f1 += weight * f;
    }

    MetricsVector {
        accuracy,
        precision,
        recall,
        f1,
        averaging,
        group: None,
        support: table.total,
        unparseable: table.unparseable,
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Grouping axis for per-group tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Attack,
    Task,
}

/// Per-group metrics plus the two overall rows: `averaged` is the unweighted
/// mean of group vectors (the paper-table convention), `pooled` recomputes
/// over all records at once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedScores {
    pub per_group: BTreeMap<String, MetricsVector>,
    pub averaged: MetricsVector,
    pub pooled: MetricsVector,
}

/// Union of the label spaces of the tasks present, first occurrence wins.
fn label_space(
    scored: &[ScoredSample],
    registry: &TaskRegistry,
) -> Result<Vec<LabelId>, MetricsError> {
    let mut tasks: Vec<TaskKind> = scored.iter().map(|s| s.task).collect();
    tasks.sort_unstable();
    tasks.dedup();
    let mut labels: Vec<LabelId> = Vec::new();
    for task in tasks {
        for label in registry.get(task)?.labels() {
            if !labels.contains(label) {
                labels.push(label.clone());
            }
        }
    }
    Ok(labels)
}

/// Score per group along the chosen axis and aggregate.
pub fn grouped_scores(
    scored: &[ScoredSample],
    group_by: GroupBy,
    registry: &TaskRegistry,
    averaging: Averaging,
) -> Result<GroupedScores, MetricsError> {
    if scored.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    let mut groups: BTreeMap<String, Vec<ScoredSample>> = BTreeMap::new();
    for s in scored {
        let key = match group_by {
            GroupBy::Attack => s.group.clone(),
            GroupBy::Task => s.task.as_str().to_string(),
        };
        if key.is_empty() {
            return Err(MetricsError::UnknownGroup(
                "record carries an empty group tag".into(),
            ));
        }
        groups.entry(key).or_default().push(s.clone());
    }

    let mut per_group = BTreeMap::new();
    for (key, members) in &groups {
        let labels = label_space(members, registry)?;
        let table = confusion(members, &labels)?;
        let mut vector = score(&table, averaging);
        vector.group = Some(key.clone());
        per_group.insert(key.clone(), vector);
    }

    let averaged = unweighted_mean(per_group.values(), averaging);

    let labels = label_space(scored, registry)?;
    let table = confusion(scored, &labels)?;
    let mut pooled = score(&table, averaging);
    pooled.group = Some("pooled".into());

    Ok(GroupedScores {
        per_group,
        averaged,
        pooled,
    })
}

/// The "Averaged Across Attacks/Tasks" row: unweighted mean of the group
/// vectors, regardless of group sizes.
fn unweighted_mean<'a, I: Iterator<Item = &'a MetricsVector>>(
    vectors: I,
    averaging: Averaging,
) -> MetricsVector {
    let mut out = MetricsVector {
        accuracy: 0.0,
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        averaging,
        group: Some("averaged".into()),
        support: 0,
        unparseable: 0,
    };
    let mut n = 0usize;
    for v in vectors {
        out.accuracy += v.accuracy;
        out.precision += v.precision;
        out.recall += v.recall;
        out.f1 += v.f1;
        out.support += v.support;
        out.unparseable += v.unparseable;
        n += 1;
    }
    if n > 0 {
        let k = n as f64;
        out.accuracy /= k;
        out.precision /= k;
        out.recall /= k;
        out.f1 /= k;
    }
    out
}

/// One CSV/JSON row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub strategy: Strategy,
    pub benchmark: String,
    /// Group tag, or the synthetic rows "averaged" / "pooled".
    pub group: String,
    pub averaging: Averaging,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub unparseable: usize,
}

impl MetricsRow {
    pub fn from_vector(
        model: &str,
        strategy: Strategy,
        benchmark: &str,
        vector: &MetricsVector,
    ) -> Self {
        MetricsRow {
            model: model.to_string(),
            strategy,
            benchmark: benchmark.to_string(),
            group: vector.group.clone().unwrap_or_else(|| "overall".into()),
            averaging: vector.averaging,
            accuracy: vector.accuracy,
            precision: vector.precision,
            recall: vector.recall,
            f1: vector.f1,
            support: vector.support,
            unparseable: vector.unparseable,
        }
    }
}

/// Write rows as CSV with a header. Float formatting is the shortest
/// round-trip form, so identical runs produce identical bytes.
pub fn write_csv<W: Write>(rows: &[MetricsRow], writer: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Vec<MetricsRow>, MetricsError> {
    let mut r = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for result in r.deserialize::<MetricsRow>() {
        rows.push(result?);
    }
    Ok(rows)
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("empty record list")]
    EmptyRecords,
    #[error("records misaligned with samples: {0}")]
    Misaligned(String),
    #[error("gold label {0:?} outside the declared label space")]
    GoldOutsideSpace(String),
    #[error("unknown group tag: {0}")]
    UnknownGroup(String),
    #[error("unknown averaging: {0}")]
    UnknownAveraging(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}
