//! Classification task specs: label space, instruction prompt, parse rules.
//!
//! Specs are data. The built-in defaults ship as TOML files compiled into
//! the binary (`assets/tasks/`), and the same format loads from disk so an
//! experiment can pin or audit its exact parse behavior.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use super::{LabelId, ModelError, TaskKind};

/// How to extract a label from free-form model output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "field")]
pub enum ParseMode {
    /// Case-insensitive scan for label surface forms or synonyms; exactly
    /// one distinct matching label is required.
    KeywordScan,
    /// Locate the first well-formed JSON object in the output and read the
    /// named field.
    JsonField(String),
}

/// One label with its accepted surface synonyms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub id: LabelId,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub synonyms: Vec<String>,
}

/// A classification task's label space, instruction prompt, and parse rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Config-file schema version, frozen per experiment.
    #[serde(default = "default_version")]
    pub version: u32,
    /// Prompt template with exactly one `{text}` placeholder.
    pub instruction: String,
    pub parse_mode: ParseMode,
    labels: Vec<LabelEntry>,
}

fn default_version() -> u32 {
    1
}

pub const TEXT_PLACEHOLDER: &str = "{text}";

impl TaskSpec {
    pub fn new(
        kind: TaskKind,
        labels: Vec<LabelEntry>,
        instruction: String,
        parse_mode: ParseMode,
    ) -> Result<Self, ModelError> {
        let spec = TaskSpec {
            kind,
            labels,
            instruction,
            parse_mode,
            version: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The built-in spec for a task, parsed from the compiled-in TOML.
    pub fn builtin(kind: TaskKind) -> &'static TaskSpec {
        &BUILTIN[&kind]
    }

    pub fn labels(&self) -> impl Iterator<Item = &LabelId> {
        self.labels.iter().map(|e| &e.id)
    }

    pub fn label_entries(&self) -> &[LabelEntry] {
        &self.labels
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    /// Render the instruction with the sample text substituted.
    pub fn render_instruction(&self, text: &str) -> String {
        self.instruction.replacen(TEXT_PLACEHOLDER, text, 1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.labels.is_empty() {
            return Err(ModelError::InvalidSpec(format!(
                "{}: empty label space",
                self.kind
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for entry in &self.labels {
            if !seen.insert(&entry.id) {
                return Err(ModelError::InvalidSpec(format!(
                    "{}: duplicate label {:?}",
                    self.kind,
                    entry.id.as_str()
                )));
            }
        }
        let placeholders = self.instruction.matches(TEXT_PLACEHOLDER).count();
        if placeholders != 1 {
            return Err(ModelError::InvalidSpec(format!(
                "{}: instruction must contain exactly one {} placeholder, found {}",
                self.kind, TEXT_PLACEHOLDER, placeholders
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ModelError> {
        let spec: TaskSpec =
            toml::from_str(s).map_err(|e| ModelError::SpecFile(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| ModelError::SpecFile(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("task spec serializes")
    }
}

/// Lookup from task kind to spec; benchmarks with mixed GLUE tasks resolve
/// the spec per sample.
#[derive(Debug, Clone)]
pub struct TaskRegistry {
    specs: BTreeMap<TaskKind, TaskSpec>,
}

impl TaskRegistry {
    /// Registry holding the built-in spec for every task.
    pub fn builtin() -> Self {
        TaskRegistry {
            specs: TaskKind::ALL
                .iter()
                .map(|k| (*k, TaskSpec::builtin(*k).clone()))
                .collect(),
        }
    }

    pub fn insert(&mut self, spec: TaskSpec) {
        self.specs.insert(spec.kind, spec);
    }

    pub fn get(&self, kind: TaskKind) -> Result<&TaskSpec, ModelError> {
        self.specs
            .get(&kind)
            .ok_or_else(|| ModelError::InvalidSpec(format!("no spec registered for {kind}")))
    }
}

static BUILTIN: LazyLock<BTreeMap<TaskKind, TaskSpec>> = LazyLock::new(|| {
    let sources = [
        (TaskKind::Sst2, include_str!("../../assets/tasks/sst2.toml")),
        (TaskKind::Mnli, include_str!("../../assets/tasks/mnli.toml")),
        (TaskKind::Qnli, include_str!("../../assets/tasks/qnli.toml")),
        (TaskKind::Qqp, include_str!("../../assets/tasks/qqp.toml")),
        (
            TaskKind::FlipkartSentiment,
            include_str!("../../assets/tasks/flipkart-sentiment.toml"),
        ),
        (
            TaskKind::DdxplusDiagnosis,
            include_str!("../../assets/tasks/ddxplus-diagnosis.toml"),
        ),
    ];
    sources
        .into_iter()
        .map(|(kind, src)| {
            let spec = TaskSpec::from_toml_str(src)
                .unwrap_or_else(|e| panic!("built-in {kind} spec invalid: {e}"));
            assert_eq!(spec.kind, kind, "built-in spec file declares wrong kind");
            (kind, spec)
        })
        .collect()
});

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_and_validate() {
        for kind in TaskKind::ALL {
            let spec = TaskSpec::builtin(kind);
            spec.validate().unwrap();
        }
    }

    #[test]
    fn ddxplus_has_48_diseases_and_json_mode() {
        let spec = TaskSpec::builtin(TaskKind::DdxplusDiagnosis);
        assert_eq!(spec.label_count(), 48);
        assert_eq!(spec.parse_mode, ParseMode::JsonField("disease".into()));
        assert!(spec.labels().any(|l| l.as_str() == "spontaneous pneumothorax"));
        assert!(spec.labels().any(|l| l.as_str() == "cluster headache"));
        assert!(spec.labels().any(|l| l.as_str() == "pericarditis"));
    }

    #[test]
    fn flipkart_labels_are_three_sentiments() {
        let spec = TaskSpec::builtin(TaskKind::FlipkartSentiment);
        let labels: Vec<_> = spec.labels().map(|l| l.as_str().to_string()).collect();
        assert_eq!(labels, ["positive", "negative", "neutral"]);
    }

    #[test]
    fn glue_label_spaces_follow_convention() {
        let mnli: Vec<_> = TaskSpec::builtin(TaskKind::Mnli)
            .labels()
            .map(|l| l.as_str().to_string())
            .collect();
        assert_eq!(mnli, ["entailment", "neutral", "contradiction"]);
        let qnli: Vec<_> = TaskSpec::builtin(TaskKind::Qnli)
            .labels()
            .map(|l| l.as_str().to_string())
            .collect();
        assert_eq!(qnli, ["entailment", "not_entailment"]);
        let qqp: Vec<_> = TaskSpec::builtin(TaskKind::Qqp)
            .labels()
            .map(|l| l.as_str().to_string())
            .collect();
        assert_eq!(qqp, ["duplicate", "not_duplicate"]);
    }

    #[test]
    fn render_substitutes_text_once() {
        let spec = TaskSpec::builtin(TaskKind::Sst2);
        let rendered = spec.render_instruction("a fine movie");
        assert!(rendered.contains("a fine movie"));
        assert!(!rendered.contains(TEXT_PLACEHOLDER));
    }

    #[test]
    fn empty_labels_rejected() {
        let err = TaskSpec::new(
            TaskKind::Sst2,
            vec![],
            "classify {text}".into(),
            ParseMode::KeywordScan,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::InvalidSpec(_)));
    }

    #[test]
    fn duplicate_labels_rejected() {
        let entry = |s: &str| LabelEntry {
            id: LabelId::new(s),
            synonyms: vec![],
        };
        let err = TaskSpec::new(
            TaskKind::Sst2,
            vec![entry("positive"), entry("Positive")],
            "classify {text}".into(),
            ParseMode::KeywordScan,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::InvalidSpec(_)));
    }

    #[test]
    fn missing_placeholder_rejected() {
        let entry = LabelEntry {
            id: LabelId::new("positive"),
            synonyms: vec![],
        };
        let err = TaskSpec::new(
            TaskKind::Sst2,
            vec![entry],
            "classify this".into(),
            ParseMode::KeywordScan,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::InvalidSpec(_)));
    }

    #[test]
    fn toml_round_trip() {
        let spec = TaskSpec::builtin(TaskKind::Mnli);
        let toml = spec.to_toml_string();
        let back = TaskSpec::from_toml_str(&toml).unwrap();
        assert_eq!(&back, spec);
    }
}
