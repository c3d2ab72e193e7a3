//! End-to-end harness tests over the scripted backend: run directory
//! layout, analyze, report, and the preflight errors.

use std::collections::BTreeMap;
use std::path::Path;

use robusteval::correlation::CorrelationSign;
use robusteval::harness::{cmd_analyze, cmd_report, cmd_run, AnalysisConfig, ExperimentConfig};
use robusteval::metrics::{self, Averaging, MetricsRow};
use robusteval::model::Strategy;

/// Script that answers every step for every benchmark. Inference is wrong
/// for texts containing "poor" only at the baseline, so strategy scores
/// differ and nothing degenerates.
fn full_script() -> String {
    [
        r#"{"tag":"inspect","response":"Because of odd spellings, the noise in input sentence are {vry}."}"#,
        r#"{"tag":"refine","response":"a cleaned up sentence"}"#,
        r#"{"tag":"compare","response":"(a)"}"#,
        r#"{"tag":"evaluate","response":"no"}"#,
        r#"{"tag":"verify","contains":"unsafe or unlawful","response":"safe"}"#,
        r#"{"tag":"verify","contains":"positive, negative, neutral","response":"{\"sentiment\": \"neutral\"}"}"#,
        r#"{"tag":"verify","contains":"disease predicted is correct","response":"in-distribution"}"#,
        r#"{"tag":"rewrite","response":"REWRITTEN text"}"#,
        r#"{"tag":"infer","contains":"REWRITTEN","response":"positive"}"#,
        r#"{"tag":"infer","contains":"poor","response":"negative"}"#,
        r#"{"tag":"infer","contains":"most likely diagnosis","response":"{\"disease\": \"gerd\"}"}"#,
        r#"{"tag":"infer","response":"positive"}"#,
        r#"{"tag":"baseline","contains":"most likely diagnosis","response":"{\"disease\": \"influenza\"}"}"#,
        r#"{"tag":"baseline","response":"positive"}"#,
    ]
    .join("\n")
}

fn promptrobust_jsonl() -> String {
    let attacks = ["textfooler", "textbugger", "semantic", "deepwordbug"];
    (0..4)
        .map(|i| {
            let label = if i % 2 == 0 { "negative" } else { "positive" };
            let filler = if i % 2 == 0 { "poor" } else { "fine" };
            format!(
                r#"{{"id":"pr-{i}","text":"the film was {filler} number {i}","label":"{label}","attack":"{}"}}"#,
                attacks[i]
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn advglue_jsonl() -> String {
    let mut lines = Vec::new();
    for (i, attack) in ["textfooler", "textbugger"].iter().enumerate() {
        lines.push(format!(
            r#"{{"id":"ag-s{i}","text":"a poor sentence {i}","label":"negative","attack":"{attack}","task":"sst2"}}"#
        ));
        lines.push(format!(
            r#"{{"id":"ag-q{i}","text":"question and passage {i}","label":"entailment","attack":"{attack}","task":"qnli"}}"#
        ));
    }
    lines.join("\n")
}

fn flipkart_csv() -> String {
    let mut csv = String::from("text,label\n");
    for i in 0..6 {
        let (filler, label) = if i < 3 {
            ("poor quality and weak battery life......", "negative")
        } else {
            ("nice quality and great battery life.....", "positive")
        };
        let mut text = format!("review {i}: {filler} ");
        while text.chars().count() < 151 {
            text.push('z');
        }
        csv.push_str(&format!("{text},{label}\n"));
    }
    csv
}

fn ddxplus_jsonl() -> String {
    (0..5)
        .map(|i| {
            format!(
                r#"{{"id":"ddx-{i}","text":"patient {i} reports burning chest pain after meals","label":"gerd"}}"#
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn write_fixtures(dir: &Path) {
    std::fs::write(dir.join("script.jsonl"), full_script()).unwrap();
    std::fs::write(dir.join("promptrobust.jsonl"), promptrobust_jsonl()).unwrap();
    std::fs::write(dir.join("advglue.jsonl"), advglue_jsonl()).unwrap();
    std::fs::write(dir.join("flipkart.csv"), flipkart_csv()).unwrap();
    std::fs::write(dir.join("ddxplus.jsonl"), ddxplus_jsonl()).unwrap();
    std::fs::write(
        dir.join("exemplars.txt"),
        "The delivery was quick.\nGreat value.\nWorks as described.\n",
    )
    .unwrap();
}

fn full_config(dir: &Path, strategies: &str) -> ExperimentConfig {
    let toml = format!(
        r#"
[model]
name = "scripted-e2e"
script = "script.jsonl"

[benchmarks]
promptrobust = "promptrobust.jsonl"
advglue = "advglue.jsonl"
flipkart = "flipkart.csv"
ddxplus = "ddxplus.jsonl"

[run]
strategies = [{strategies}]
n_total = 4
seed = 11

[icr]
exemplar_file = "exemplars.txt"
k = 3

[output]
dir = "{}"
"#,
        dir.join("runs").display()
    );
    let cfg_path = dir.join("exp.toml");
    std::fs::write(&cfg_path, toml).unwrap();
    ExperimentConfig::load(&cfg_path).unwrap()
}

#[tokio::test]
async fn four_benchmarks_three_strategies_layout() {
    let dir = tempfile::tempdir().unwrap();
    write_fixtures(dir.path());
    let config = full_config(dir.path(), r#""baseline", "ahp", "icr""#);
    let outcome = cmd_run(&config).await.unwrap();

    // 4 benchmarks x 3 strategies = 12 record files, one metrics CSV
    let records_dir = outcome.run_dir.join("records");
    let files: Vec<_> = std::fs::read_dir(&records_dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .collect();
    assert_eq!(files.len(), 12, "one record file per benchmark-strategy pairing");
    assert!(outcome.metrics_csv.is_file());
    assert!(outcome.run_dir.join("manifest.json").is_file());
    assert!(outcome.run_dir.join("metrics.json").is_file());
    for bench in ["promptrobust-sst2", "advglue++", "flipkart", "ddxplus"] {
        assert!(
            outcome.run_dir.join("reports").join(format!("{bench}.subsample.json")).is_file(),
            "missing subsample report for {bench}"
        );
    }
    assert!(outcome.skips.is_empty());
}

#[tokio::test]
async fn ahp2_runs_only_on_ood_benchmarks() {
    let dir = tempfile::tempdir().unwrap();
    write_fixtures(dir.path());
    let config = full_config(dir.path(), r#""baseline", "ahp2""#);
    let outcome = cmd_run(&config).await.unwrap();
    assert_eq!(outcome.skips.len(), 2, "{:?}", outcome.skips);
    assert!(outcome.skips.iter().any(|s| s.starts_with("promptrobust-sst2/ahp2")));
    assert!(outcome.skips.iter().any(|s| s.starts_with("advglue++/ahp2")));
    assert!(outcome.record_digests.contains_key("flipkart/ahp2"));
    assert!(outcome.record_digests.contains_key("ddxplus/ahp2"));
    assert!(!outcome.record_digests.contains_key("advglue++/ahp2"));
}

#[tokio::test]
async fn missing_exemplar_file_fails_preflight() {
    let dir = tempfile::tempdir().unwrap();
    write_fixtures(dir.path());
    std::fs::remove_file(dir.path().join("exemplars.txt")).unwrap();
    let toml = format!(
        r#"
[model]
name = "scripted-e2e"
script = "script.jsonl"

[benchmarks]
flipkart = "flipkart.csv"

[run]
strategies = ["icr"]

[icr]
exemplar_file = "exemplars.txt"

[output]
dir = "{}"
"#,
        dir.path().join("runs").display()
    );
    let cfg_path = dir.path().join("exp.toml");
    std::fs::write(&cfg_path, toml).unwrap();
    let err = ExperimentConfig::load(&cfg_path).unwrap_err();
    assert!(err.to_string().contains("exemplars.txt"), "{err}");
}

#[tokio::test]
async fn analyze_and_report_over_a_real_run() {
    let dir = tempfile::tempdir().unwrap();
    write_fixtures(dir.path());
    let config = full_config(dir.path(), r#""baseline", "ahp", "ahp2", "icr""#);
    let outcome = cmd_run(&config).await.unwrap();

    let analysis = cmd_analyze(&outcome.metrics_csv, &AnalysisConfig::default(), &outcome.run_dir)
        .unwrap();
    assert_eq!(analysis.summary.len(), 1);
    assert!(outcome.run_dir.join("fits.json").is_file());
    assert!(!analysis.plot_paths.is_empty());
    let svg = std::fs::read_to_string(&analysis.plot_paths[0]).unwrap();
    assert!(svg.contains("ood-x-adv-y"));
    // ahp2 exists only on the OOD side, so every pairing logs it
    let accuracy_fit = analysis
        .fits
        .iter()
        .find(|f| f.metric == robusteval::correlation::MetricKind::Accuracy)
        .unwrap();
    assert!(accuracy_fit.exclusions.iter().any(|e| e.strategy == Strategy::Ahp2));

    let report = cmd_report(&outcome.run_dir).unwrap();
    assert!(report.contains("# Run report: scripted-e2e"));
    for bench in ["promptrobust-sst2", "advglue++", "flipkart", "ddxplus"] {
        assert!(report.contains(&format!("## {bench}")), "missing section {bench}");
    }
    assert!(report.contains("### Flag rates"));
    assert!(report.contains("ahp2 is OOD-only"));
    assert!(outcome.run_dir.join("report.md").is_file());
}

#[test]
fn report_on_empty_dir_is_a_clear_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_report(dir.path()).unwrap_err();
    assert!(err.to_string().contains("manifest.json"), "{err}");
}

fn hand_rows(model: &str, values: &[(&str, Strategy, f64)]) -> Vec<MetricsRow> {
    values
        .iter()
        .map(|(bench, strategy, acc)| MetricsRow {
            model: model.to_string(),
            strategy: *strategy,
            benchmark: bench.to_string(),
            group: "averaged".into(),
            averaging: Averaging::Weighted,
            accuracy: *acc,
            precision: *acc,
            recall: *acc,
            f1: *acc,
            support: 10,
            unparseable: 0,
        })
        .collect()
}

#[test]
fn engineered_positive_slope_summary() {
    // scores rise together across strategies: slope +1 after normalization
    let rows = hand_rows(
        "engineered",
        &[
            ("promptrobust-sst2", Strategy::Baseline, 0.2),
            ("promptrobust-sst2", Strategy::Ahp, 0.5),
            ("promptrobust-sst2", Strategy::Icr, 0.8),
            ("flipkart", Strategy::Baseline, 0.3),
            ("flipkart", Strategy::Ahp, 0.6),
            ("flipkart", Strategy::Icr, 0.9),
        ],
    );
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("metrics.csv");
    let mut buf = Vec::new();
    metrics::write_csv(&rows, &mut buf).unwrap();
    std::fs::write(&csv, buf).unwrap();

    let outcome = cmd_analyze(&csv, &AnalysisConfig::default(), dir.path()).unwrap();
    let summary: BTreeMap<String, CorrelationSign> = outcome.summary.into_iter().collect();
    assert_eq!(summary["engineered"], CorrelationSign::Positive);
    let fit = &outcome.fits.iter().find(|f| f.metric == robusteval::correlation::MetricKind::Accuracy).unwrap().fit;
    assert!((fit.slope - 1.0).abs() < 1e-9);
}

#[test]
fn single_strategy_csv_is_a_pairing_error() {
    let rows = hand_rows(
        "lonely",
        &[
            ("promptrobust-sst2", Strategy::Baseline, 0.5),
            ("flipkart", Strategy::Baseline, 0.6),
        ],
    );
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("metrics.csv");
    let mut buf = Vec::new();
    metrics::write_csv(&rows, &mut buf).unwrap();
    std::fs::write(&csv, buf).unwrap();
    let err = cmd_analyze(&csv, &AnalysisConfig::default(), dir.path()).unwrap_err();
    assert!(err.to_string().contains("at least 2"), "{err}");
}

#[tokio::test]
async fn warm_cache_rerun_is_digest_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_fixtures(dir.path());
    let mut config = full_config(dir.path(), r#""baseline", "ahp""#);
    config.output.cache_dir = Some(dir.path().join("cache"));
    let cold = cmd_run(&config).await.unwrap();
    let warm = cmd_run(&config).await.unwrap();
    assert_eq!(cold.record_digests, warm.record_digests);
    assert_eq!(
        std::fs::read(&cold.metrics_csv).unwrap(),
        std::fs::read(&warm.metrics_csv).unwrap()
    );
}
