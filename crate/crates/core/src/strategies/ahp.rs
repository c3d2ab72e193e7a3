//! The iterative defense pipeline: inspect the input for noise or OOD
//! tokens, refine it, adopt the clearer text, and loop until the evaluator
//! is satisfied; then infer and verify the answer.
//!
//! Two prompt variants exist — the adversarial-noise set and the OOD set —
//! shipped verbatim as TOML assets and loadable from disk. The variant also
//! decides the verification semantics: the adversarial verifier does a
//! safety check on the output (a non-echo response replaces the answer),
//! the OOD verifier either confirms with "in-distribution" or supplies a
//! corrected label as a one-field JSON object.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::Gateway;
use crate::model::parse::{first_json_object, normalize_token, strip_edge_punctuation};
use crate::model::{
    canonical_label, parse_label, ParsedLabel, Prediction, RunFlag, RunRecord, Sample, StepTag,
    Strategy, TaskKind, TaskSpec,
};

use super::{BackendAbort, GenParams, StrategyError, Trace};

pub const DEFAULT_MAX_ITERATIONS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AhpVariant {
    Adversarial,
    Ood,
}

impl AhpVariant {
    /// The strategy id a run with this prompt set reports under.
    pub fn strategy(&self) -> Strategy {
        match self {
            AhpVariant::Adversarial => Strategy::Ahp,
            AhpVariant::Ood => Strategy::Ahp2,
        }
    }
}

/// The five step templates plus per-task verification overrides.
///
/// Placeholders are substituted per step: inspect and evaluate take
/// `{text}`; refine takes `{text}` and `{tokens}`; compare takes
/// `{original}` and `{refined}`; verification takes `{output}` in the
/// adversarial variant and `{previous_task}` / `{previous_prediction}` in
/// the OOD variant. Braced words outside a step's vocabulary (such as the
/// answer-shape instruction "the noise in input sentence are {tokens}")
/// pass through to the model untouched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AhpPromptSet {
    pub variant: AhpVariant,
    #[serde(default = "default_version")]
    pub version: u32,
    pub inspect: String,
    pub refine: String,
    pub compare: String,
    pub evaluate: String,
    pub verify: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub verify_overrides: BTreeMap<TaskKind, String>,
}

fn default_version() -> u32 {
    1
}

static BUILTIN_ADVERSARIAL: LazyLock<AhpPromptSet> = LazyLock::new(|| {
    AhpPromptSet::from_toml_str(include_str!("../../assets/prompts/ahp-adversarial.toml"))
        .expect("built-in adversarial prompt set valid")
});

static BUILTIN_OOD: LazyLock<AhpPromptSet> = LazyLock::new(|| {
    AhpPromptSet::from_toml_str(include_str!("../../assets/prompts/ahp-ood.toml"))
        .expect("built-in ood prompt set valid")
});

impl AhpPromptSet {
    pub fn builtin(variant: AhpVariant) -> &'static AhpPromptSet {
        match variant {
            AhpVariant::Adversarial => &BUILTIN_ADVERSARIAL,
            AhpVariant::Ood => &BUILTIN_OOD,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, PromptSetError> {
        let set: AhpPromptSet = toml::from_str(s).map_err(|e| PromptSetError::File(e.to_string()))?;
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PromptSetError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| PromptSetError::File(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    /// Verification template for a task: the per-task override when one
    /// exists, the variant default otherwise.
    pub fn verify_template(&self, kind: TaskKind) -> &str {
        self.verify_overrides.get(&kind).map_or(&self.verify, |s| s.as_str())
    }

    pub fn validate(&self) -> Result<(), PromptSetError> {
        let require = |step: &str, template: &str, placeholders: &[&str]| {
            for ph in placeholders {
                let token = format!("{{{ph}}}");
                if !template.contains(&token) {
                    return Err(PromptSetError::MissingPlaceholder {
                        step: step.to_string(),
                        placeholder: token,
                    });
                }
            }
            Ok(())
        };
        require("inspect", &self.inspect, &["text"])?;
        require("refine", &self.refine, &["text", "tokens"])?;
        require("compare", &self.compare, &["original", "refined"])?;
        require("evaluate", &self.evaluate, &["text"])?;
        let verify_placeholders: &[&str] = match self.variant {
            AhpVariant::Adversarial => &["output"],
            AhpVariant::Ood => &["previous_task", "previous_prediction"],
        };
        require("verify", &self.verify, verify_placeholders)?;
        for (kind, template) in &self.verify_overrides {
            require(&format!("verify[{kind}]"), template, verify_placeholders)?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PromptSetError {
    #[error("step {step} is missing its {placeholder} placeholder")]
    MissingPlaceholder { step: String, placeholder: String },
    #[error("prompt set file error: {0}")]
    File(String),
}

/// Substitute declared placeholders in one pass, so substituted values that
/// happen to contain braced words are never re-expanded.
pub(crate) fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        let bytes = tail.as_bytes();
        for (key, value) in values {
            let kb = key.as_bytes();
            if bytes.len() > kb.len() + 1
                && bytes[kb.len() + 1] == b'}'
                && &bytes[1..kb.len() + 1] == kb
            {
                out.push_str(value);
                rest = &tail[kb.len() + 2..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

static FINAL_ANSWER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?si)because of .*?,\s*the\s+(?:ood\s+tokens?|noise(?:\s+tokens?)?)\s+in\s+(?:the\s+)?input\s+sentence\s+(?:are|is)\s+",
    )
    .expect("inspect answer pattern compiles")
});

static LAST_ARE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bare\b").expect("fallback pattern compiles"));

const NO_NOISE_ANSWERS: [&str; 7] = [
    "",
    "none",
    "n/a",
    "nothing",
    "no noise",
    "no noise found",
    "no ood tokens",
];

fn clean_tokens(raw: &str) -> Option<String> {
    let mut s = strip_edge_punctuation(raw.trim());
    // models often echo the brace-wrapped answer shape
    loop {
        let trimmed = s.trim();
        if trimmed.len() >= 2 && trimmed.starts_with('{') && trimmed.ends_with('}') {
            s = trimmed[1..trimmed.len() - 1].trim();
        } else {
            s = trimmed;
            break;
        }
    }
    let s = strip_edge_punctuation(s);
    if NO_NOISE_ANSWERS.contains(&s.to_lowercase().as_str()) {
        None
    } else {
        Some(s.to_string())
    }
}

/// Pull the identified tokens out of an inspect response. Primary path is
/// the template's trailing-sentence shape; fallbacks take the last
/// brace-delimited span, then the span after the last "are". Returns `None`
/// when nothing usable remains — the loop treats that as "no noise found".
pub fn extract_tokens(inspect_output: &str) -> Option<String> {
    // the template's final-answer sentence; the last occurrence wins
    if let Some(m) = FINAL_ANSWER.find_iter(inspect_output).last() {
        // template matched: an empty/none answer means no noise was found
        return clean_tokens(&inspect_output[m.end()..]);
    }
    if let (Some(open), Some(close)) = (inspect_output.rfind('{'), inspect_output.rfind('}')) {
        if open < close {
            if let Some(tokens) = clean_tokens(&inspect_output[open + 1..close]) {
                return Some(tokens);
            }
        }
    }
    if let Some(m) = LAST_ARE.find_iter(inspect_output).last() {
        if let Some(tokens) = clean_tokens(&inspect_output[m.end()..]) {
            return Some(tokens);
        }
    }
    None
}

enum CompareChoice {
    Original,
    Refined,
}

/// Accepts "(a)"/"(b)"/"a"/"b" in any case; anything longer or different is
/// unrecognized and the caller keeps the original text.
fn parse_compare(answer: &str) -> Option<CompareChoice> {
    let folded = answer.trim().to_lowercase();
    let folded = folded.trim_matches(|c: char| !c.is_alphanumeric());
    match folded {
        "a" => Some(CompareChoice::Original),
        "b" => Some(CompareChoice::Refined),
        _ => None,
    }
}

fn parse_yes_no(answer: &str) -> Option<bool> {
    match normalize_token(answer).as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

fn correction_field(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::DdxplusDiagnosis => "disease",
        _ => "sentiment",
    }
}

/// Loop state: bounded iteration count, the text under refinement, and the
/// tokens the last inspection found.
struct AhpLoopState {
    iteration: u32,
    current_text: String,
    last_tokens: String,
}

/// Run the full pipeline on one sample. The strategy id is derived from the
/// prompt variant: adversarial prompts report as `ahp`, OOD prompts as
/// `ahp2`.
pub async fn run_ahp(
    sample: &Sample,
    spec: &TaskSpec,
    gateway: &Gateway,
    prompts: &AhpPromptSet,
    max_iterations: u32,
    gen: &GenParams,
) -> Result<RunRecord, StrategyError> {
    super::check_sample(sample)?;
    prompts.validate()?;
    if max_iterations == 0 {
        return Err(StrategyError::Precondition("max_iterations must be >= 1".into()));
    }

    let strategy = prompts.variant.strategy();
    let mut trace = Trace::new();
    match ahp_pipeline(sample, spec, gateway, prompts, max_iterations, gen, &mut trace).await {
        Ok(prediction) => Ok(trace.finish(sample, strategy, prediction)),
        Err(BackendAbort) => Ok(trace.finish_aborted(sample, strategy)),
    }
}

#[allow(clippy::too_many_arguments)]
async fn ahp_pipeline(
    sample: &Sample,
    spec: &TaskSpec,
    gateway: &Gateway,
    prompts: &AhpPromptSet,
    max_iterations: u32,
    gen: &GenParams,
    trace: &mut Trace,
) -> Result<Prediction, BackendAbort> {
    let mut state = AhpLoopState {
        iteration: 0,
        current_text: sample.text.clone(),
        last_tokens: String::new(),
    };
    let mut exited_clean = false;

    while state.iteration < max_iterations {
        state.iteration += 1;

        let inspect_prompt = render(&prompts.inspect, &[("text", &state.current_text)]);
        let inspected = trace.step(gateway, StepTag::Inspect, inspect_prompt, gen).await?;
        let Some(tokens) = extract_tokens(&inspected) else {
            // nothing to refine: record and leave the loop
            trace.flag(RunFlag::TokenExtractFailed);
            exited_clean = true;
            break;
        };
        state.last_tokens = tokens;

        let refine_prompt = render(
            &prompts.refine,
            &[("text", state.current_text.as_str()), ("tokens", state.last_tokens.as_str())],
        );
        let refined = trace.step(gateway, StepTag::Refine, refine_prompt, gen).await?;

        let compare_prompt = render(
            &prompts.compare,
            &[("original", state.current_text.as_str()), ("refined", refined.as_str())],
        );
        let choice = trace.step(gateway, StepTag::Compare, compare_prompt, gen).await?;
        match parse_compare(&choice) {
            // an empty refinement would leave nothing to classify
            Some(CompareChoice::Refined) if !refined.trim().is_empty() => {
                state.current_text = refined;
            }
            // unrecognized answers keep the original text
            _ => {}
        }

        let evaluate_prompt = render(&prompts.evaluate, &[("text", &state.current_text)]);
        let verdict = trace.step(gateway, StepTag::Evaluate, evaluate_prompt, gen).await?;
        // "no" ends the loop; "yes" keeps refining; anything unrecognized is
        // treated as "yes" and the iteration bound does the hard exit
        if parse_yes_no(&verdict) == Some(false) {
            exited_clean = true;
            break;
        }
    }
    if !exited_clean {
        trace.flag(RunFlag::MaxIterationsHit);
    }

    let infer_prompt = spec.render_instruction(&state.current_text);
    let inferred = trace.step(gateway, StepTag::Infer, infer_prompt.clone(), gen).await?;
    let mut prediction = parse_label(&inferred, spec);

    let verify_template = prompts.verify_template(spec.kind);
    match prompts.variant {
        AhpVariant::Adversarial => {
            let verify_prompt = render(verify_template, &[("output", inferred.as_str())]);
            let verified = trace.step(gateway, StepTag::Verify, verify_prompt, gen).await?;
            let passed = normalize_token(&verified) == "safe" || {
                let echoed = parse_label(&verified, spec);
                echoed.label == prediction.label
            };
            if !passed {
                // the verifier replaced the output with its safe response
                prediction = parse_label(&verified, spec);
                trace.flag(RunFlag::VerificationOverrode);
            }
        }
        AhpVariant::Ood => {
            let verify_prompt = render(
                verify_template,
                &[("previous_task", infer_prompt.as_str()), ("previous_prediction", inferred.as_str())],
            );
            let verified = trace.step(gateway, StepTag::Verify, verify_prompt, gen).await?;
            let confirmation = normalize_token(&verified);
            if confirmation != "in-distribution" {
                if let Some(corrected) = first_json_object(&verified)
                    .and_then(|obj| obj.get(correction_field(spec.kind)).cloned())
                    .and_then(|v| v.as_str().map(str::to_string))
                {
                    prediction = Prediction {
                        label: match canonical_label(&corrected, spec) {
                            Some(label) => ParsedLabel::Label(label),
                            None => ParsedLabel::Unparseable,
                        },
                        raw: verified.clone(),
                    };
                    trace.flag(RunFlag::VerificationOverrode);
                }
                // neither confirmation nor a correction: keep the inference
            }
        }
    }
    Ok(prediction)
}
