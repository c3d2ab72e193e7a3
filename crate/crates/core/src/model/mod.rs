//! Domain types shared by all modules, plus deterministic extraction of
//! class labels from free-form model output.

pub(crate) mod parse;
mod task;

pub use parse::{canonical_label, parse_label};
pub use task::{LabelEntry, ParseMode, TaskRegistry, TaskSpec};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A canonical class label: lowercase, trimmed, unique within a task.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(String);

impl LabelId {
    /// Canonical form: trimmed and case-folded. Inner whitespace is kept
    /// (disease names contain spaces and slashes).
    pub fn new(raw: &str) -> Self {
        LabelId(raw.trim().to_lowercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The classification tasks covered by the four benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Sst2,
    Mnli,
    Qnli,
    Qqp,
    FlipkartSentiment,
    DdxplusDiagnosis,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::Sst2,
        TaskKind::Mnli,
        TaskKind::Qnli,
        TaskKind::Qqp,
        TaskKind::FlipkartSentiment,
        TaskKind::DdxplusDiagnosis,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Sst2 => "sst2",
            TaskKind::Mnli => "mnli",
            TaskKind::Qnli => "qnli",
            TaskKind::Qqp => "qqp",
            TaskKind::FlipkartSentiment => "flipkart-sentiment",
            TaskKind::DdxplusDiagnosis => "ddxplus-diagnosis",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "sst2" | "sst-2" => Ok(TaskKind::Sst2),
            "mnli" => Ok(TaskKind::Mnli),
            "qnli" => Ok(TaskKind::Qnli),
            "qqp" => Ok(TaskKind::Qqp),
            "flipkart-sentiment" | "flipkart" => Ok(TaskKind::FlipkartSentiment),
            "ddxplus-diagnosis" | "ddxplus" => Ok(TaskKind::DdxplusDiagnosis),
            other => Err(ModelError::UnknownTask(other.to_string())),
        }
    }
}

/// One benchmark item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    /// Stable key, unique within a benchmark.
    pub id: String,
    pub text: String,
    pub gold: LabelId,
    pub task: TaskKind,
    /// Attack type ("textfooler", "deepwordbug", ...), GLUE task tag, or
    /// "none" for benchmarks without a grouping axis.
    pub group: String,
}

impl Sample {
    /// Check the per-sample invariants: non-empty id and text, gold label
    /// inside the task's label space.
    pub fn validate(&self, spec: &TaskSpec) -> Result<(), ModelError> {
        if self.id.trim().is_empty() {
            return Err(ModelError::InvalidSample("empty sample id".into()));
        }
        if self.text.is_empty() {
            return Err(ModelError::InvalidSample(format!(
                "sample {}: empty text",
                self.id
            )));
        }
        if !spec.labels().any(|l| l == &self.gold) {
            return Err(ModelError::InvalidSample(format!(
                "sample {}: gold label {:?} not in {} label space",
                self.id,
                self.gold.as_str(),
                spec.kind
            )));
        }
        Ok(())
    }
}

/// The four inference strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Baseline,
    /// Iterative defense with the adversarial-noise prompt set.
    Ahp,
    /// Same pipeline with the OOD-adapted prompt set.
    Ahp2,
    /// In-context rewriting before inference.
    Icr,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Baseline, Strategy::Ahp, Strategy::Ahp2, Strategy::Icr];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::Ahp => "ahp",
            Strategy::Ahp2 => "ahp2",
            Strategy::Icr => "icr",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "baseline" => Ok(Strategy::Baseline),
            "ahp" => Ok(Strategy::Ahp),
            "ahp2" => Ok(Strategy::Ahp2),
            "icr" => Ok(Strategy::Icr),
            other => Err(ModelError::UnknownStrategy(other.to_string())),
        }
    }
}

/// Label extracted from model output, or the explicit absence of one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParsedLabel {
    Label(LabelId),
    /// No unique task label could be extracted. Scored as incorrect and
    /// tallied separately.
    Unparseable,
}

impl ParsedLabel {
    pub fn label(&self) -> Option<&LabelId> {
        match self {
            ParsedLabel::Label(l) => Some(l),
            ParsedLabel::Unparseable => None,
        }
    }

    pub fn is_unparseable(&self) -> bool {
        matches!(self, ParsedLabel::Unparseable)
    }
}

/// Point prediction for one sample: the extracted label plus the full model
/// output it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: ParsedLabel,
    pub raw: String,
}

impl Prediction {
    pub fn unparseable(raw: impl Into<String>) -> Self {
        Prediction {
            label: ParsedLabel::Unparseable,
            raw: raw.into(),
        }
    }
}

/// Pipeline step names; double as gateway request tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepTag {
    Inspect,
    Refine,
    Compare,
    Evaluate,
    Infer,
    Verify,
    Rewrite,
    Baseline,
}

impl StepTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            StepTag::Inspect => "inspect",
            StepTag::Refine => "refine",
            StepTag::Compare => "compare",
            StepTag::Evaluate => "evaluate",
            StepTag::Infer => "infer",
            StepTag::Verify => "verify",
            StepTag::Rewrite => "rewrite",
            StepTag::Baseline => "baseline",
        }
    }
}

impl fmt::Display for StepTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StepTag {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "inspect" => Ok(StepTag::Inspect),
            "refine" => Ok(StepTag::Refine),
            "compare" => Ok(StepTag::Compare),
            "evaluate" => Ok(StepTag::Evaluate),
            "infer" => Ok(StepTag::Infer),
            "verify" => Ok(StepTag::Verify),
            "rewrite" => Ok(StepTag::Rewrite),
            "baseline" => Ok(StepTag::Baseline),
            other => Err(ModelError::UnknownTag(other.to_string())),
        }
    }
}

/// One request/response against a text-generation backend, with provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub tag: StepTag,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub user: String,
    /// Response text on success.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    /// Error description when the call failed after retries.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: u64,
    pub cached: bool,
    pub attempt: u32,
}

/// Anomalies observed while running a pipeline on one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunFlag {
    MaxIterationsHit,
    VerificationOverrode,
    RewriteFallback,
    Unparseable,
    /// Inspect output yielded no noise tokens; loop exited early.
    TokenExtractFailed,
    /// A backend call failed after retries; the record is partial.
    BackendError,
}

/// Per-sample pipeline trace: ordered exchanges, parsed prediction, flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sample_id: String,
    pub strategy: Strategy,
    pub steps: Vec<LlmExchange>,
    pub prediction: Prediction,
    pub elapsed_ms: u64,
    pub flags: BTreeSet<RunFlag>,
}

impl RunRecord {
    /// Content digest that ignores timing and cache provenance, so that
    /// byte-for-byte replays (scripted backend, warm cache) compare equal.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.sample_id.as_bytes());
        h.update([0]);
        h.update(self.strategy.as_str().as_bytes());
        for step in &self.steps {
            h.update([0]);
            h.update(step.tag.as_str().as_bytes());
            h.update([1]);
            if let Some(sys) = &step.system {
                h.update(sys.as_bytes());
            }
            h.update([2]);
            h.update(step.user.as_bytes());
            h.update([3]);
            if let Some(resp) = &step.response {
                h.update(resp.as_bytes());
            }
            h.update([4]);
            if let Some(err) = &step.error {
                h.update(err.as_bytes());
            }
        }
        h.update([5]);
        match &self.prediction.label {
            ParsedLabel::Label(l) => h.update(l.as_str().as_bytes()),
            ParsedLabel::Unparseable => h.update(b"\x00unparseable"),
        }
        h.update([6]);
        h.update(self.prediction.raw.as_bytes());
        for flag in &self.flags {
            h.update([7]);
            h.update(format!("{flag:?}").as_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Errors from domain-type construction and validation.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("unknown task kind: {0}")]
    UnknownTask(String),
    #[error("unknown strategy: {0}")]
    UnknownStrategy(String),
    #[error("unknown step tag: {0}")]
    UnknownTag(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("task spec file error: {0}")]
    SpecFile(String),
}
