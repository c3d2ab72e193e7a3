//! In-context rewriting: one call rewrites the input toward the exemplars'
//! style, a second call runs the task instruction on the rewritten text.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::Gateway;
use crate::model::{parse_label, RunFlag, RunRecord, Sample, StepTag, Strategy, TaskSpec};

use super::{ahp::render, BackendAbort, GenParams, StrategyError, Trace};

/// Default rewrite prompt. `{style_transfer_exemplars}` takes the exemplar
/// block (ID examples for OOD runs, perturbation examples for adversarial
/// runs); `{style_input}` takes the test input.
pub const DEFAULT_REWRITE_TEMPLATE: &str = "Here are some example sentences:\n\n{style_transfer_exemplars}\n\nRewrite the following input to be more like the example sentences, keeping its original meaning intact. Output only the rewritten input.\n\nInput: {style_input}";

/// Alternative prompt without exemplars; exposed but not used by default.
pub const PARAPHRASE_TEMPLATE: &str = "Paraphrase the following input, keeping its original meaning intact. Output only the paraphrase.\n\nInput: {style_input}";

/// Rewrite configuration: the exemplar pool, how many to use, and the
/// prompt template. Exemplars come from a declared file, never from the
/// evaluation set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IcrConfig {
    pub exemplars: Vec<String>,
    pub k: usize,
    pub rewrite_template: String,
}

impl IcrConfig {
    pub const DEFAULT_K: usize = 3;

    pub fn new(exemplars: Vec<String>, k: usize) -> Result<Self, String> {
        let cfg = IcrConfig {
            exemplars,
            k,
            rewrite_template: DEFAULT_REWRITE_TEMPLATE.to_string(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read exemplars from a plain-text file, one per line. Blank lines are
    /// skipped.
    pub fn from_exemplar_file(path: &Path, k: usize) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let exemplars: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        Self::new(exemplars, k)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("exemplar count k must be >= 1".into());
        }
        if self.exemplars.is_empty() {
            return Err("exemplar list is empty".into());
        }
        if self.k > self.exemplars.len() {
            return Err(format!(
                "k = {} exceeds the {} available exemplars",
                self.k,
                self.exemplars.len()
            ));
        }
        for ph in ["{style_input}", "{style_transfer_exemplars}"] {
            if !self.rewrite_template.contains(ph) {
                return Err(format!("rewrite template is missing its {ph} placeholder"));
            }
        }
        Ok(())
    }

    fn exemplar_block(&self) -> String {
        self.exemplars[..self.k].join("\n")
    }
}

/// Rewrite the sample toward the exemplars, then infer on the rewritten
/// text. An empty rewrite falls back to the original input.
pub async fn run_icr(
    sample: &Sample,
    spec: &TaskSpec,
    gateway: &Gateway,
    cfg: &IcrConfig,
    gen: &GenParams,
) -> Result<RunRecord, StrategyError> {
    super::check_sample(sample)?;
    cfg.validate().map_err(StrategyError::Icr)?;

    let mut trace = Trace::new();
    match icr_pipeline(sample, spec, gateway, cfg, gen, &mut trace).await {
        Ok(prediction) => Ok(trace.finish(sample, Strategy::Icr, prediction)),
        Err(BackendAbort) => Ok(trace.finish_aborted(sample, Strategy::Icr)),
    }
}

async fn icr_pipeline(
    sample: &Sample,
    spec: &TaskSpec,
    gateway: &Gateway,
    cfg: &IcrConfig,
    gen: &GenParams,
    trace: &mut Trace,
) -> Result<crate::model::Prediction, BackendAbort> {
    let exemplar_block = cfg.exemplar_block();
    let rewrite_prompt = render(
        &cfg.rewrite_template,
        &[
            ("style_transfer_exemplars", exemplar_block.as_str()),
            ("style_input", sample.text.as_str()),
        ],
    );
    let rewritten = trace.step(gateway, StepTag::Rewrite, rewrite_prompt, gen).await?;

    let infer_input = if rewritten.trim().is_empty() {
        trace.flag(RunFlag::RewriteFallback);
        sample.text.clone()
    } else {
        rewritten
    };
    let inferred = trace
        .step(gateway, StepTag::Infer, spec.render_instruction(&infer_input), gen)
        .await?;
    Ok(parse_label(&inferred, spec))
}
