//! Benchmark loading and subsampling.
//!
//! Four loaders, one per benchmark, each applying its exact selection rule:
//!
//! * `promptrobust-sst2` — proportional representation of the five attack
//!   types (largest-remainder rounding, seeded uniform draw within each).
//! * `advglue++` — equal samples per attack type (round-robin remainder by
//!   group name), same total as PromptRobust.
//! * `flipkart` — keep reviews of 150–160 characters in source order,
//!   truncate to the first 300.
//! * `ddxplus` — all rows verbatim, warn when the count is not 100.
//!
//! All subsampling is a pure function of (source file, seed).

mod loaders;

pub use loaders::{load_advglue, load_ddxplus, load_flipkart, load_promptrobust};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchKind {
    Adversarial,
    Ood,
}

impl fmt::Display for BenchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchKind::Adversarial => f.write_str("adversarial"),
            BenchKind::Ood => f.write_str("ood"),
        }
    }
}

/// The four benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BenchmarkName {
    #[serde(rename = "promptrobust-sst2")]
    PromptrobustSst2,
    #[serde(rename = "advglue++")]
    AdvgluePlusPlus,
    #[serde(rename = "flipkart")]
    Flipkart,
    #[serde(rename = "ddxplus")]
    Ddxplus,
}

impl BenchmarkName {
    pub const ALL: [BenchmarkName; 4] = [
        BenchmarkName::PromptrobustSst2,
        BenchmarkName::AdvgluePlusPlus,
        BenchmarkName::Flipkart,
        BenchmarkName::Ddxplus,
    ];

    pub fn kind(&self) -> BenchKind {
        match self {
            BenchmarkName::PromptrobustSst2 | BenchmarkName::AdvgluePlusPlus => {
                BenchKind::Adversarial
            }
            BenchmarkName::Flipkart | BenchmarkName::Ddxplus => BenchKind::Ood,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            BenchmarkName::PromptrobustSst2 => "promptrobust-sst2",
            BenchmarkName::AdvgluePlusPlus => "advglue++",
            BenchmarkName::Flipkart => "flipkart",
            BenchmarkName::Ddxplus => "ddxplus",
        }
    }
}

impl fmt::Display for BenchmarkName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchmarkName {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "promptrobust-sst2" | "promptrobust" | "promptbench" => Ok(BenchmarkName::PromptrobustSst2),
            "advglue++" | "advglue" | "advglueplusplus" => Ok(BenchmarkName::AdvgluePlusPlus),
            "flipkart" => Ok(BenchmarkName::Flipkart),
            "ddxplus" => Ok(BenchmarkName::Ddxplus),
            other => Err(IngestError::UnknownBenchmark(other.to_string())),
        }
    }
}

/// Where a loaded benchmark came from, for the run manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the source file bytes.
    pub source_digest: String,
    /// Identifier of the subsample rule applied.
    pub rule: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSet {
    pub name: BenchmarkName,
    pub kind: BenchKind,
    pub samples: Vec<Sample>,
    pub provenance: Provenance,
}

impl BenchmarkSet {
    /// Digest over sample content; equal inputs and seed must reproduce it.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.name.as_str().as_bytes());
        for s in &self.samples {
            h.update([0]);
            h.update(s.id.as_bytes());
            h.update([1]);
            h.update(s.text.as_bytes());
            h.update([2]);
            h.update(s.gold.as_str().as_bytes());
            h.update([3]);
            h.update(s.task.as_str().as_bytes());
            h.update([4]);
            h.update(s.group.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// What the subsampler kept, emitted as JSON beside each run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsampleReport {
    pub input_count: usize,
    pub output_count: usize,
    pub per_group_counts: BTreeMap<String, usize>,
    pub label_histogram: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SubsampleReport {
    pub(crate) fn tally(samples: &[Sample], input_count: usize) -> Self {
        let mut per_group_counts = BTreeMap::new();
        let mut label_histogram = BTreeMap::new();
        for s in samples {
            *per_group_counts.entry(s.group.clone()).or_insert(0) += 1;
            *label_histogram.entry(s.gold.as_str().to_string()).or_insert(0) += 1;
        }
        SubsampleReport {
            input_count,
            output_count: samples.len(),
            per_group_counts,
            label_histogram,
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    BadRow {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("unknown benchmark: {0}")]
    UnknownBenchmark(String),
    #[error("unknown attack tag {tag:?} (row {row})")]
    UnknownAttack { tag: String, row: String },
    #[error("requested {requested} samples but source has only {available}")]
    NTotalTooLarge { requested: usize, available: usize },
    #[error("groups cannot meet their quota: {}", format_deficits(.0))]
    GroupDeficit(Vec<(String, usize, usize)>),
    #[error("no rows survived the filter ({0})")]
    EmptyAfterFilter(String),
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

fn format_deficits(deficits: &[(String, usize, usize)]) -> String {
    deficits
        .iter()
        .map(|(g, quota, have)| format!("{g} needs {quota}, has {have}"))
        .collect::<Vec<_>>()
        .join("; ")
}
