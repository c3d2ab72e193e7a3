//! Experiment execution: build the backend, load benchmarks, run every
//! (strategy, benchmark) pairing, and persist records, metrics, and the
//! manifest in a fresh run directory.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use crate::gateway::{Gateway, HttpBackend, HttpConfig, ResponseCache, ScriptMode, ScriptedBackend, TextBackend};
use crate::ingest::{
    load_advglue, load_ddxplus, load_flipkart, load_promptrobust, BenchKind, BenchmarkName,
    BenchmarkSet, SubsampleReport,
};
use crate::metrics::{self, Averaging, GroupBy, MetricsRow};
use crate::model::{Strategy, TaskRegistry, TaskSpec};
use crate::strategies::{run_benchmark, AhpPromptSet, GenParams, IcrConfig, RunParams};

use super::manifest::{file_sha256, identity_digest, sha256_hex, BenchmarkInfo, RunManifest};
use super::{io_err, DirLock, ExperimentConfig, HarnessError};

/// What one experiment run produced, for callers and tests.
#[derive(Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub metrics_csv: PathBuf,
    pub metrics_rows: Vec<MetricsRow>,
    /// Timing-independent record digests, keyed "benchmark/strategy".
    pub record_digests: BTreeMap<String, Vec<String>>,
    pub skips: Vec<String>,
}

/// Grouping axis each benchmark's tables use.
fn group_axis(name: BenchmarkName) -> GroupBy {
    match name {
        BenchmarkName::AdvgluePlusPlus => GroupBy::Task,
        _ => GroupBy::Attack,
    }
}

/// Execute the configured experiment: phase 1 runs baselines, phase 2 the
/// improvement strategies. Any configuration error aborts before the first
/// backend call.
pub async fn cmd_run(config: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    config.validate()?;
    let _lock = DirLock::acquire(&config.output.dir)?;

    // registry with optional per-task overrides
    let mut registry = TaskRegistry::builtin();
    for path in config.tasks.values() {
        registry.insert(TaskSpec::load(path)?);
    }

    // prompt sets, external files winning over the built-ins
    let adversarial_prompts = match &config.prompts.adversarial {
        Some(path) => AhpPromptSet::load(path)?,
        None => AhpPromptSet::builtin(crate::strategies::AhpVariant::Adversarial).clone(),
    };
    let ood_prompts = match &config.prompts.ood {
        Some(path) => AhpPromptSet::load(path)?,
        None => AhpPromptSet::builtin(crate::strategies::AhpVariant::Ood).clone(),
    };

    let icr = match &config.icr {
        Some(icr) => Some(
            IcrConfig::from_exemplar_file(&icr.exemplar_file, icr.k)
                .map_err(HarnessError::Config)?,
        ),
        None => None,
    };

    let params = RunParams {
        gen: GenParams {
            max_tokens: config.run.max_tokens,
            temperature: config.run.temperature,
        },
        max_iterations: config.run.max_iterations,
        adversarial_prompts: adversarial_prompts.clone(),
        ood_prompts: ood_prompts.clone(),
        icr: icr.clone(),
        max_in_flight: config.run.max_in_flight,
    };

    // input digests feed the run identity
    let mut input_digests = BTreeMap::new();
    input_digests.insert("config".to_string(), sha256_hex(config.canonical_toml().as_bytes()));
    input_digests.insert(
        "prompts.adversarial".to_string(),
        sha256_hex(&serde_json::to_vec(&adversarial_prompts)?),
    );
    input_digests.insert(
        "prompts.ood".to_string(),
        sha256_hex(&serde_json::to_vec(&ood_prompts)?),
    );
    if let Some(path) = &config.model.script {
        input_digests.insert("script".to_string(), file_sha256(path)?);
    }
    if let Some(icr_cfg) = &config.icr {
        input_digests.insert("exemplars".to_string(), file_sha256(&icr_cfg.exemplar_file)?);
    }
    for (kind, path) in &config.tasks {
        input_digests.insert(format!("task.{kind}"), file_sha256(path)?);
    }

    // benchmarks, with their subsample reports
    let mut benchmarks: Vec<(BenchmarkSet, SubsampleReport)> = Vec::new();
    for name in config.benchmarks.present() {
        let path = config.benchmarks.get(name).expect("present");
        let loaded = match name {
            BenchmarkName::PromptrobustSst2 => {
                load_promptrobust(path, config.run.n_total.expect("validated"), config.run.seed)?
            }
            BenchmarkName::AdvgluePlusPlus => {
                load_advglue(path, config.run.n_total.expect("validated"), config.run.seed)?
            }
            BenchmarkName::Flipkart => load_flipkart(path)?,
            BenchmarkName::Ddxplus => load_ddxplus(path)?,
        };
        input_digests.insert(
            format!("benchmark.{name}"),
            loaded.0.provenance.source_digest.clone(),
        );
        benchmarks.push(loaded);
    }

    let identity = identity_digest(&input_digests);
    let gateway = build_gateway(config)?;

    // phase 1 runs the baseline everywhere; phase 2 the rest in config order
    let mut strategies: Vec<Strategy> = Vec::new();
    if config.run.strategies.contains(&Strategy::Baseline) {
        strategies.push(Strategy::Baseline);
    }
    for s in &config.run.strategies {
        if *s != Strategy::Baseline && !strategies.contains(s) {
            strategies.push(*s);
        }
    }

    let mut skips = Vec::new();
    let mut metrics_rows: Vec<MetricsRow> = Vec::new();
    let mut record_digests = BTreeMap::new();
    let mut record_files: Vec<(String, Vec<String>)> = Vec::new();
    for strategy in &strategies {
        for (bench, _) in &benchmarks {
            if *strategy == Strategy::Ahp2 && bench.kind == BenchKind::Adversarial {
                // the OOD prompt variant only applies to OOD benchmarks
                skips.push(format!("{}/{}: ahp2 is OOD-only", bench.name, strategy));
                continue;
            }
            let records = run_benchmark(bench, &registry, &gateway, *strategy, &params).await?;

            let scored = metrics::align(&bench.samples, &records)?;
            for averaging in Averaging::BOTH {
                let grouped =
                    metrics::grouped_scores(&scored, group_axis(bench.name), &registry, averaging)?;
                for vector in grouped.per_group.values() {
                    metrics_rows.push(MetricsRow::from_vector(
                        &config.model.name,
                        *strategy,
                        bench.name.as_str(),
                        vector,
                    ));
                }
                for vector in [&grouped.averaged, &grouped.pooled] {
                    metrics_rows.push(MetricsRow::from_vector(
                        &config.model.name,
                        *strategy,
                        bench.name.as_str(),
                        vector,
                    ));
                }
            }

            let key = format!("{}/{}", bench.name, strategy);
            record_digests.insert(key.clone(), records.iter().map(|r| r.digest()).collect());
            let lines: Vec<String> = records
                .iter()
                .map(serde_json::to_string)
                .collect::<Result<_, _>>()?;
            record_files.push((format!("{}-{}.jsonl", bench.name, strategy), lines));
        }
    }

    metrics_rows.sort_by(|a, b| {
        (a.benchmark.as_str(), a.strategy, a.group.as_str(), a.averaging).cmp(&(
            b.benchmark.as_str(),
            b.strategy,
            b.group.as_str(),
            b.averaging,
        ))
    });

    // persist the run
    let run_dir = create_run_dir(&config.output.dir, &identity)?;
    let records_dir = run_dir.join("records");
    std::fs::create_dir_all(&records_dir).map_err(|e| io_err(&records_dir, e))?;
    for (file, lines) in record_files {
        let path = records_dir.join(file);
        let mut f = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        for line in lines {
            writeln!(f, "{line}").map_err(|e| io_err(&path, e))?;
        }
    }

    let reports_dir = run_dir.join("reports");
    std::fs::create_dir_all(&reports_dir).map_err(|e| io_err(&reports_dir, e))?;
    for (bench, report) in &benchmarks {
        let path = reports_dir.join(format!("{}.subsample.json", bench.name));
        std::fs::write(&path, serde_json::to_vec_pretty(report)?).map_err(|e| io_err(&path, e))?;
    }

    let metrics_csv = run_dir.join("metrics.csv");
    let mut csv_bytes = Vec::new();
    metrics::write_csv(&metrics_rows, &mut csv_bytes)?;
    std::fs::write(&metrics_csv, &csv_bytes).map_err(|e| io_err(&metrics_csv, e))?;
    let metrics_json = run_dir.join("metrics.json");
    std::fs::write(&metrics_json, serde_json::to_vec_pretty(&metrics_rows)?)
        .map_err(|e| io_err(&metrics_json, e))?;

    let manifest = RunManifest {
        created_utc: chrono::Utc::now().to_rfc3339(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        model: config.model.name.clone(),
        seed: config.run.seed,
        identity_digest: identity,
        input_digests,
        skips: skips.clone(),
        benchmarks: benchmarks
            .iter()
            .map(|(b, _)| {
                (
                    b.name.as_str().to_string(),
                    BenchmarkInfo {
                        provenance: b.provenance.clone(),
                        sample_count: b.samples.len(),
                    },
                )
            })
            .collect(),
        config: config.clone(),
    };
    let manifest_path = run_dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)
        .map_err(|e| io_err(&manifest_path, e))?;

    Ok(RunOutcome {
        run_dir,
        metrics_csv,
        metrics_rows,
        record_digests,
        skips,
    })
}

fn build_gateway(config: &ExperimentConfig) -> Result<Gateway, HarnessError> {
    let backend: Arc<dyn TextBackend> = match (&config.model.script, &config.model.endpoint) {
        (Some(script), None) => Arc::new(
            ScriptedBackend::from_jsonl_path(script, ScriptMode::Keyed, config.model.script_strict)
                .map_err(|e| HarnessError::Config(e.to_string()))?,
        ),
        (None, Some(endpoint)) => Arc::new(
            HttpBackend::new(HttpConfig {
                base_url: endpoint.clone(),
                model: config.model.name.clone(),
                auth_env: config.model.auth_env.clone(),
                timeout: Duration::from_secs(config.model.timeout_secs),
            })
            .map_err(|e| HarnessError::Config(e.to_string()))?,
        ),
        _ => unreachable!("validated: exactly one backend"),
    };
    let mut gateway = Gateway::new(backend);
    if let Some(cache_dir) = &config.output.cache_dir {
        gateway = gateway.with_cache(ResponseCache::new(cache_dir).map_err(|e| io_err(cache_dir, e))?);
    }
    Ok(gateway)
}

/// `<output>/<timestamp>-<digest12>`, suffixed when a same-second rerun of
/// the same identity would collide.
fn create_run_dir(output: &Path, identity: &str) -> Result<PathBuf, HarnessError> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{stamp}-{}", &identity[..12]);
    for attempt in 0..1000u32 {
        let name = if attempt == 0 {
            base.clone()
        } else {
            format!("{base}-{attempt}")
        };
        let dir = output.join(&name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io_err(&dir, e)),
        }
    }
    Err(HarnessError::Config("could not allocate a run directory".into()))
}
