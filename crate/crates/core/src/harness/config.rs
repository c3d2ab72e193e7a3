//! Declarative experiment configuration: a single TOML file plus flag
//! overrides. Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::correlation::AxisConvention;
use crate::ingest::BenchmarkName;
use crate::metrics::Averaging;
use crate::model::{Strategy, TaskKind};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub benchmarks: BenchmarkPaths,
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub icr: Option<IcrFileConfig>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    pub output: OutputConfig,
    #[serde(default)]
    pub prompts: PromptPaths,
    /// Task-spec override files, per task kind.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tasks: BTreeMap<TaskKind, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Display name used in metrics rows ("llama2-7b", "mixtral-8x7b", ...).
    pub name: String,
    /// Chat-completion API root, e.g. `https://host/v1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Environment variable holding the bearer token for the endpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    /// JSONL script file; selects the deterministic scripted backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub script_strict: bool,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_true() -> bool {
    true
}

fn default_timeout_secs() -> u64 {
    120
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub promptrobust: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advglue: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flipkart: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ddxplus: Option<PathBuf>,
}

impl BenchmarkPaths {
    pub fn get(&self, name: BenchmarkName) -> Option<&PathBuf> {
        match name {
            BenchmarkName::PromptrobustSst2 => self.promptrobust.as_ref(),
            BenchmarkName::AdvgluePlusPlus => self.advglue.as_ref(),
            BenchmarkName::Flipkart => self.flipkart.as_ref(),
            BenchmarkName::Ddxplus => self.ddxplus.as_ref(),
        }
    }

    pub fn present(&self) -> Vec<BenchmarkName> {
        BenchmarkName::ALL
            .into_iter()
            .filter(|n| self.get(*n).is_some())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub strategies: Vec<Strategy>,
    /// Subsample size for the attack-tagged benchmarks. Required when
    /// promptrobust or advglue paths are set; the source material never
    /// states a number, so there is no default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_total: Option<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
}

fn default_seed() -> u64 {
    42
}

fn default_max_iterations() -> u32 {
    crate::strategies::DEFAULT_MAX_ITERATIONS
}

fn default_max_in_flight() -> usize {
    4
}

fn default_max_tokens() -> u32 {
    crate::gateway::DEFAULT_MAX_TOKENS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcrFileConfig {
    pub exemplar_file: PathBuf,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    crate::strategies::IcrConfig::DEFAULT_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub axis_convention: AxisConvention,
    #[serde(default = "default_neutral_band")]
    pub neutral_band: f64,
    #[serde(default = "default_averaging")]
    pub averaging: Averaging,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            axis_convention: AxisConvention::default(),
            neutral_band: default_neutral_band(),
            averaging: default_averaging(),
        }
    }
}

fn default_neutral_band() -> f64 {
    crate::correlation::DEFAULT_NEUTRAL_BAND
}

fn default_averaging() -> Averaging {
    Averaging::Weighted
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

/// External prompt-set files; the built-in verbatim sets apply when absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversarial: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Load, resolve relative paths against the config's directory, and
    /// validate. Every referenced file must exist.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| super::io_err(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        if let Some(p) = self.model.script.as_mut() {
            resolve(p);
        }
        for p in [
            self.benchmarks.promptrobust.as_mut(),
            self.benchmarks.advglue.as_mut(),
            self.benchmarks.flipkart.as_mut(),
            self.benchmarks.ddxplus.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        if let Some(icr) = self.icr.as_mut() {
            resolve(&mut icr.exemplar_file);
        }
        resolve(&mut self.output.dir);
        if let Some(p) = self.output.cache_dir.as_mut() {
            resolve(p);
        }
        for p in [self.prompts.adversarial.as_mut(), self.prompts.ood.as_mut()]
            .into_iter()
            .flatten()
        {
            resolve(p);
        }
        for p in self.tasks.values_mut() {
            resolve(p);
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |msg: String| Err(HarnessError::Config(msg));

        match (&self.model.endpoint, &self.model.script) {
            (None, None) => return err("model needs either an endpoint or a script".into()),
            (Some(_), Some(_)) => {
                return err("model endpoint and script are mutually exclusive".into())
            }
            _ => {}
        }
        if self.run.strategies.is_empty() {
            return err("run.strategies is empty".into());
        }
        let present = self.benchmarks.present();
        if present.is_empty() {
            return err("no benchmark paths configured".into());
        }
        let needs_n_total = present.contains(&BenchmarkName::PromptrobustSst2)
            || present.contains(&BenchmarkName::AdvgluePlusPlus);
        if needs_n_total && self.run.n_total.is_none() {
            return err("run.n_total is required for promptrobust/advglue subsampling".into());
        }
        if self.run.strategies.contains(&Strategy::Icr) && self.icr.is_none() {
            return err("strategy icr requires an [icr] section with an exemplar file".into());
        }
        if self.run.temperature.is_nan() || self.run.temperature < 0.0 {
            return err(format!("temperature must be >= 0, got {}", self.run.temperature));
        }
        if self.run.max_iterations == 0 {
            return err("max_iterations must be >= 1".into());
        }
        if self.analysis.neutral_band.is_nan() || self.analysis.neutral_band < 0.0 {
            return err(format!(
                "neutral_band must be >= 0, got {}",
                self.analysis.neutral_band
            ));
        }

        // every referenced input file must exist before the first backend call
        let mut required: Vec<(&str, &PathBuf)> = Vec::new();
        if let Some(p) = &self.model.script {
            required.push(("model.script", p));
        }
        for name in &present {
            required.push(("benchmark", self.benchmarks.get(*name).expect("present")));
        }
        if let Some(icr) = &self.icr {
            required.push(("icr.exemplar_file", &icr.exemplar_file));
        }
        if let Some(p) = &self.prompts.adversarial {
            required.push(("prompts.adversarial", p));
        }
        if let Some(p) = &self.prompts.ood {
            required.push(("prompts.ood", p));
        }
        for p in self.tasks.values() {
            required.push(("tasks", p));
        }
        for (what, path) in required {
            if !path.is_file() {
                return err(format!("{what}: file not found: {}", path.display()));
            }
        }
        Ok(())
    }

    /// Canonical serialization used for the config digest.
    pub fn canonical_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn minimal_toml(dir: &Path) -> String {
        format!(
            r#"
[model]
name = "test-model"
script = "script.jsonl"

[benchmarks]
flipkart = "flipkart.csv"

[run]
strategies = ["baseline", "ahp"]

[output]
dir = "{}"
"#,
            dir.join("runs").display()
        )
    }

    fn write_inputs(dir: &Path) {
        fs::write(dir.join("script.jsonl"), "{\"response\":\"x\"}\n").unwrap();
        fs::write(
            dir.join("flipkart.csv"),
            format!("text,label\n{},positive\n", "y".repeat(155)),
        )
        .unwrap();
    }

    #[test]
    fn loads_and_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        write_inputs(dir.path());
        let cfg_path = dir.path().join("exp.toml");
        fs::write(&cfg_path, minimal_toml(dir.path())).unwrap();
        let cfg = ExperimentConfig::load(&cfg_path).unwrap();
        assert!(cfg.model.script.as_ref().unwrap().is_absolute());
        assert_eq!(cfg.run.seed, 42);
        assert_eq!(cfg.run.max_iterations, 3);
        assert_eq!(cfg.analysis.averaging, Averaging::Weighted);
    }

    #[test]
    fn missing_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_inputs(dir.path());
        fs::remove_file(dir.path().join("flipkart.csv")).unwrap();
        let cfg_path = dir.path().join("exp.toml");
        fs::write(&cfg_path, minimal_toml(dir.path())).unwrap();
        let err = ExperimentConfig::load(&cfg_path).unwrap_err();
        assert!(err.to_string().contains("flipkart.csv"), "{err}");
    }

    #[test]
    fn icr_without_exemplars_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_inputs(dir.path());
        let toml = minimal_toml(dir.path()).replace("\"baseline\", \"ahp\"", "\"icr\"");
        let cfg_path = dir.path().join("exp.toml");
        fs::write(&cfg_path, toml).unwrap();
        let err = ExperimentConfig::load(&cfg_path).unwrap_err();
        assert!(err.to_string().contains("exemplar"), "{err}");
    }

    #[test]
    fn n_total_required_for_adversarial_sets() {
        let dir = tempfile::tempdir().unwrap();
        write_inputs(dir.path());
        fs::write(dir.path().join("pr.jsonl"), "").unwrap();
        let toml = minimal_toml(dir.path())
            .replace("flipkart = \"flipkart.csv\"", "promptrobust = \"pr.jsonl\"");
        let cfg_path = dir.path().join("exp.toml");
        fs::write(&cfg_path, toml).unwrap();
        let err = ExperimentConfig::load(&cfg_path).unwrap_err();
        assert!(err.to_string().contains("n_total"), "{err}");
    }

    #[test]
    fn endpoint_and_script_mutually_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        write_inputs(dir.path());
        let toml = minimal_toml(dir.path()).replace(
            "script = \"script.jsonl\"",
            "script = \"script.jsonl\"\nendpoint = \"http://localhost/v1\"",
        );
        let cfg_path = dir.path().join("exp.toml");
        fs::write(&cfg_path, toml).unwrap();
        assert!(ExperimentConfig::load(&cfg_path).is_err());
    }

    #[test]
    fn canonical_toml_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        write_inputs(dir.path());
        let cfg_path = dir.path().join("exp.toml");
        fs::write(&cfg_path, minimal_toml(dir.path())).unwrap();
        let cfg = ExperimentConfig::load(&cfg_path).unwrap();
        let back = ExperimentConfig::from_toml_str(&cfg.canonical_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
