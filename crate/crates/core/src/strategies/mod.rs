//! The inference pipelines: baseline, the iterative
//! inspect/refine/compare/evaluate defense in its adversarial and OOD prompt
//! variants, and in-context rewriting. Each maps (sample, task spec) to one
//! audit record.

mod ahp;
mod icr;

pub use ahp::{extract_tokens, run_ahp, AhpPromptSet, AhpVariant, PromptSetError, DEFAULT_MAX_ITERATIONS};
pub use icr::{run_icr, IcrConfig, DEFAULT_REWRITE_TEMPLATE, PARAPHRASE_TEMPLATE};

use std::collections::BTreeSet;
use std::time::Instant;

use futures::stream::{self, StreamExt, TryStreamExt};

use crate::gateway::{Gateway, GenRequest, DEFAULT_MAX_TOKENS};
use crate::ingest::BenchmarkSet;
use crate::model::{
    parse_label, LlmExchange, Prediction, RunFlag, RunRecord, Sample, StepTag, Strategy,
    TaskRegistry, TaskSpec,
};

/// Decoding parameters shared by every call a pipeline makes.
#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: 0.0,
        }
    }
}

/// Everything run_benchmark needs beyond the benchmark itself.
#[derive(Debug, Clone)]
pub struct RunParams {
    pub gen: GenParams,
    pub max_iterations: u32,
    pub adversarial_prompts: AhpPromptSet,
    pub ood_prompts: AhpPromptSet,
    pub icr: Option<IcrConfig>,
    pub max_in_flight: usize,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            gen: GenParams::default(),
            max_iterations: ahp::DEFAULT_MAX_ITERATIONS,
            adversarial_prompts: AhpPromptSet::builtin(AhpVariant::Adversarial).clone(),
            ood_prompts: AhpPromptSet::builtin(AhpVariant::Ood).clone(),
            icr: None,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StrategyError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Prompts(#[from] PromptSetError),
    #[error("icr config: {0}")]
    Icr(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Accumulates a pipeline's exchanges and flags; a backend failure aborts
/// the pipeline but still yields a flagged record.
pub(crate) struct Trace {
    steps: Vec<LlmExchange>,
    flags: BTreeSet<RunFlag>,
    started: Instant,
}

/// Marker: a backend call failed after retries; the exchange and flag are
/// already recorded.
pub(crate) struct BackendAbort;

impl Trace {
    pub(crate) fn new() -> Self {
        Trace {
            steps: Vec::new(),
            flags: BTreeSet::new(),
            started: Instant::now(),
        }
    }

    pub(crate) fn flag(&mut self, flag: RunFlag) {
        self.flags.insert(flag);
    }

    /// Issue one generation call and record the exchange either way.
    pub(crate) async fn step(
        &mut self,
        gateway: &Gateway,
        tag: StepTag,
        user: String,
        gen: &GenParams,
    ) -> Result<String, BackendAbort> {
        let mut req = GenRequest::new(tag, user);
        req.max_tokens = gen.max_tokens;
        req.temperature = gen.temperature;
        match gateway.generate(&req).await {
            Ok(resp) => {
                self.steps.push(LlmExchange {
                    tag,
                    system: req.system,
                    user: req.user,
                    response: Some(resp.text.clone()),
                    error: None,
                    latency_ms: resp.latency_ms,
                    cached: resp.cached,
                    attempt: resp.attempt,
                });
                Ok(resp.text)
            }
            Err(err) => {
                self.steps.push(LlmExchange {
                    tag,
                    system: req.system,
                    user: req.user,
                    response: None,
                    error: Some(err.to_string()),
                    latency_ms: 0,
                    cached: false,
                    attempt: 0,
                });
                self.flags.insert(RunFlag::BackendError);
                Err(BackendAbort)
            }
        }
    }

    pub(crate) fn finish(
        mut self,
        sample: &Sample,
        strategy: Strategy,
        prediction: Prediction,
    ) -> RunRecord {
        if prediction.label.is_unparseable() {
            self.flags.insert(RunFlag::Unparseable);
        }
        RunRecord {
            sample_id: sample.id.clone(),
            strategy,
            steps: self.steps,
            prediction,
            elapsed_ms: self.started.elapsed().as_millis() as u64,
            flags: self.flags,
        }
    }

    pub(crate) fn finish_aborted(self, sample: &Sample, strategy: Strategy) -> RunRecord {
        RunRecord {
            sample_id: sample.id.clone(),
            strategy,
            steps: self.steps,
            prediction: Prediction::unparseable(""),
            elapsed_ms: self.started.elapsed().as_millis() as u64,
            flags: self.flags,
        }
    }
}

fn check_sample(sample: &Sample) -> Result<(), StrategyError> {
    if sample.text.is_empty() {
        return Err(StrategyError::Precondition(format!(
            "sample {}: empty text",
            sample.id
        )));
    }
    Ok(())
}

/// Plain zero-shot inference: render the task instruction with the sample
/// text, make one call, parse the label.
pub async fn run_baseline(
    sample: &Sample,
    spec: &TaskSpec,
    gateway: &Gateway,
    gen: &GenParams,
) -> Result<RunRecord, StrategyError> {
    check_sample(sample)?;
    let mut trace = Trace::new();
    let prompt = spec.render_instruction(&sample.text);
    match trace.step(gateway, StepTag::Baseline, prompt, gen).await {
        Ok(text) => {
            let prediction = parse_label(&text, spec);
            Ok(trace.finish(sample, Strategy::Baseline, prediction))
        }
        Err(BackendAbort) => Ok(trace.finish_aborted(sample, Strategy::Baseline)),
    }
}

/// Run one strategy over a whole benchmark: one record per sample, in
/// sample order, with per-sample failures flagged rather than fatal.
pub async fn run_benchmark(
    bench: &BenchmarkSet,
    registry: &TaskRegistry,
    gateway: &Gateway,
    strategy: Strategy,
    params: &RunParams,
) -> Result<Vec<RunRecord>, StrategyError> {
    // configuration errors surface before the first backend call
    params.adversarial_prompts.validate()?;
    params.ood_prompts.validate()?;
    if strategy == Strategy::Icr && params.icr.is_none() {
        return Err(StrategyError::Icr("strategy icr requires an exemplar config".into()));
    }
    if let Some(icr) = &params.icr {
        icr.validate().map_err(StrategyError::Icr)?;
    }
    if params.max_iterations == 0 {
        return Err(StrategyError::Precondition("max_iterations must be >= 1".into()));
    }
    for sample in &bench.samples {
        let spec = registry.get(sample.task)?;
        sample.validate(spec)?;
        check_sample(sample)?;
    }

    stream::iter(bench.samples.iter().map(|sample| async move {
        let spec = registry.get(sample.task)?;
        match strategy {
            Strategy::Baseline => run_baseline(sample, spec, gateway, &params.gen).await,
            Strategy::Ahp => {
                run_ahp(
                    sample,
                    spec,
                    gateway,
                    &params.adversarial_prompts,
                    params.max_iterations,
                    &params.gen,
                )
                .await
            }
            Strategy::Ahp2 => {
                run_ahp(
                    sample,
                    spec,
                    gateway,
                    &params.ood_prompts,
                    params.max_iterations,
                    &params.gen,
                )
                .await
            }
            Strategy::Icr => {
                let icr = params.icr.as_ref().expect("validated above");
                run_icr(sample, spec, gateway, icr, &params.gen).await
            }
        }
    }))
    .buffered(params.max_in_flight.max(1))
    .try_collect()
    .await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::script_entry as entry;
    use crate::gateway::ScriptedBackend;
    use crate::model::TaskKind;
    use std::sync::Arc;

    fn sample(text: &str) -> Sample {
        Sample {
            id: "s1".into(),
            text: text.into(),
            gold: crate::model::LabelId::new("negative"),
            task: TaskKind::Sst2,
            group: "textfooler".into(),
        }
    }

    fn gw(entries: Vec<crate::gateway::ScriptEntry>) -> Gateway {
        Gateway::new(Arc::new(ScriptedBackend::keyed(entries, true)))
    }

    #[tokio::test]
    async fn baseline_single_exchange() {
        let gateway = gw(vec![entry(StepTag::Baseline, "", "negative")]);
        let spec = TaskSpec::builtin(TaskKind::Sst2);
        let rec = run_baseline(&sample("a dreary film"), spec, &gateway, &GenParams::default())
            .await
            .unwrap();
        assert_eq!(rec.steps.len(), 1);
        assert_eq!(rec.prediction.label.label().unwrap().as_str(), "negative");
        assert_eq!(rec.strategy, Strategy::Baseline);
        assert!(rec.flags.is_empty());
    }

    #[tokio::test]
    async fn baseline_unparseable_flagged() {
        let gateway = gw(vec![entry(StepTag::Baseline, "", "I cannot tell")]);
        let spec = TaskSpec::builtin(TaskKind::Sst2);
        let rec = run_baseline(&sample("x"), spec, &gateway, &GenParams::default())
            .await
            .unwrap();
        assert!(rec.prediction.label.is_unparseable());
        assert!(rec.flags.contains(&RunFlag::Unparseable));
    }

    #[tokio::test]
    async fn baseline_empty_text_rejected_before_any_call() {
        let backend = Arc::new(crate::gateway::CountingBackend::new(ScriptedBackend::keyed(
            vec![entry(StepTag::Baseline, "", "negative")],
            true,
        )));
        let gateway = Gateway::new(backend.clone());
        let spec = TaskSpec::builtin(TaskKind::Sst2);
        let err = run_baseline(&sample(""), spec, &gateway, &GenParams::default())
            .await
            .unwrap_err();
        assert!(matches!(err, StrategyError::Precondition(_)));
        assert_eq!(backend.calls(), 0);
    }

    #[tokio::test]
    async fn baseline_backend_error_flagged_not_fatal() {
        let gateway = gw(vec![]); // strict, empty script: every call misses
        let spec = TaskSpec::builtin(TaskKind::Sst2);
        let rec = run_baseline(&sample("x"), spec, &gateway, &GenParams::default())
            .await
            .unwrap();
        assert!(rec.flags.contains(&RunFlag::BackendError));
        assert_eq!(rec.steps.len(), 1);
        assert!(rec.steps[0].error.is_some());
    }

    fn bench(samples: Vec<Sample>) -> BenchmarkSet {
        BenchmarkSet {
            name: crate::ingest::BenchmarkName::PromptrobustSst2,
            kind: crate::ingest::BenchKind::Adversarial,
            samples,
            provenance: crate::ingest::Provenance {
                source_digest: "test".into(),
                rule: "test".into(),
                seed: 0,
            },
        }
    }

    fn samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                id: format!("s{i}"),
                text: format!("sentence number {i}"),
                gold: crate::model::LabelId::new("negative"),
                task: TaskKind::Sst2,
                group: "textfooler".into(),
            })
            .collect()
    }

    #[tokio::test]
    async fn run_benchmark_aligns_ids() {
        let gateway = gw(vec![entry(StepTag::Baseline, "", "negative")]);
        let b = bench(samples(3));
        let records = run_benchmark(
            &b,
            &TaskRegistry::builtin(),
            &gateway,
            Strategy::Baseline,
            &RunParams::default(),
        )
        .await
        .unwrap();
        assert_eq!(records.len(), 3);
        for (s, r) in b.samples.iter().zip(&records) {
            assert_eq!(s.id, r.sample_id);
        }
    }

    #[tokio::test]
    async fn run_benchmark_partial_failure_does_not_abort() {
        // the script only answers prompts containing "number 0" or "number 2"
        let gateway = gw(vec![
            entry(StepTag::Baseline, "number 0", "negative"),
            entry(StepTag::Baseline, "number 2", "negative"),
        ]);
        let b = bench(samples(3));
        let records = run_benchmark(
            &b,
            &TaskRegistry::builtin(),
            &gateway,
            Strategy::Baseline,
            &RunParams::default(),
        )
        .await
        .unwrap();
        assert_eq!(records.len(), 3);
        assert!(!records[0].flags.contains(&RunFlag::BackendError));
        assert!(records[1].flags.contains(&RunFlag::BackendError));
        assert!(!records[2].flags.contains(&RunFlag::BackendError));
    }

    #[tokio::test]
    async fn run_benchmark_icr_requires_config() {
        let gateway = gw(vec![]);
        let b = bench(samples(1));
        let err = run_benchmark(
            &b,
            &TaskRegistry::builtin(),
            &gateway,
            Strategy::Icr,
            &RunParams::default(),
        )
        .await
        .unwrap_err();
        assert!(matches!(err, StrategyError::Icr(_)));
    }

    #[tokio::test]
    async fn run_benchmark_deterministic_digests() {
        let b = bench(samples(4));
        let mut digests = Vec::new();
        for _ in 0..2 {
            let gateway = gw(vec![entry(StepTag::Baseline, "", "negative")]);
            let records = run_benchmark(
                &b,
                &TaskRegistry::builtin(),
                &gateway,
                Strategy::Baseline,
                &RunParams::default(),
            )
            .await
            .unwrap();
            digests.push(records.iter().map(|r| r.digest()).collect::<Vec<_>>());
        }
        assert_eq!(digests[0], digests[1]);
    }
}
