//! Human-readable run report: paper-style tables per benchmark plus flag
//! rates, rendered to one markdown document.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::metrics::{read_csv, Averaging, MetricsRow};
use crate::model::{RunFlag, RunRecord, Strategy};

use super::{io_err, HarnessError, RunManifest};

const FLAG_COLUMNS: [(RunFlag, &str); 5] = [
    (RunFlag::Unparseable, "unparseable"),
    (RunFlag::VerificationOverrode, "verification-overrode"),
    (RunFlag::RewriteFallback, "rewrite-fallback"),
    (RunFlag::MaxIterationsHit, "max-iterations-hit"),
    (RunFlag::BackendError, "backend-error"),
];

/// Render a completed run directory to markdown and write `report.md`
/// beside the metrics.
pub fn cmd_report(run_dir: &Path) -> Result<String, HarnessError> {
    let manifest_path = run_dir.join("manifest.json");
    if !manifest_path.is_file() {
        return Err(HarnessError::Config(format!(
            "{} is not a run directory (missing manifest.json)",
            run_dir.display()
        )));
    }
    let manifest: RunManifest = serde_json::from_slice(
        &std::fs::read(&manifest_path).map_err(|e| io_err(&manifest_path, e))?,
    )?;
    let csv_path = run_dir.join("metrics.csv");
    let rows = read_csv(std::fs::File::open(&csv_path).map_err(|e| io_err(&csv_path, e))?)
        .map_err(|e| HarnessError::Schema(e.to_string()))?;

    // records per (benchmark, strategy) for flag rates
    let mut records: BTreeMap<(String, Strategy), Vec<RunRecord>> = BTreeMap::new();
    let records_dir = run_dir.join("records");
    if records_dir.is_dir() {
        let mut paths: Vec<_> = std::fs::read_dir(&records_dir)
            .map_err(|e| io_err(&records_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            // file name shape: <benchmark>-<strategy>.jsonl
            let Some((bench, strategy)) = stem.rsplit_once('-') else {
                continue;
            };
            let Ok(strategy) = strategy.parse::<Strategy>() else {
                continue;
            };
            let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let mut recs = Vec::new();
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                recs.push(serde_json::from_str::<RunRecord>(line)?);
            }
            records.insert((bench.to_string(), strategy), recs);
        }
    }

    let mut out = String::new();
    let _ = writeln!(out, "# Run report: {}", manifest.model);
    let _ = writeln!(out);
    let _ = writeln!(out, "- created: {}", manifest.created_utc);
    let _ = writeln!(out, "- identity: `{}`", &manifest.identity_digest[..12]);
    let _ = writeln!(out, "- seed: {}", manifest.seed);
    if !manifest.skips.is_empty() {
        let _ = writeln!(out, "- skipped pairings: {}", manifest.skips.join("; "));
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "| benchmark | samples | subsample rule |");
    let _ = writeln!(out, "|---|---|---|");
    for (name, info) in &manifest.benchmarks {
        let _ = writeln!(
            out,
            "| {name} | {} | {} |",
            info.sample_count, info.provenance.rule
        );
    }

    let benchmarks: Vec<String> = {
        let mut names: Vec<String> = rows.iter().map(|r| r.benchmark.clone()).collect();
        names.sort();
        names.dedup();
        names
    };

    for bench in &benchmarks {
        let _ = writeln!(out);
        let _ = writeln!(out, "## {bench}");

        // overall table, weighted averaging, one row per strategy
        let averaged: Vec<&MetricsRow> = rows
            .iter()
            .filter(|r| {
                r.benchmark == *bench && r.group == "averaged" && r.averaging == Averaging::Weighted
            })
            .collect();
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "| strategy | accuracy | precision | recall | f1 | unparseable |"
        );
        let _ = writeln!(out, "|---|---|---|---|---|---|");
        for row in &averaged {
            let _ = writeln!(
                out,
                "| {} | {:.3} | {:.3} | {:.3} | {:.3} | {} |",
                row.strategy, row.accuracy, row.precision, row.recall, row.f1, row.unparseable
            );
        }

        // per-group accuracy, strategies as columns
        let strategies: Vec<Strategy> = averaged.iter().map(|r| r.strategy).collect();
        let mut groups: Vec<String> = rows
            .iter()
            .filter(|r| {
                r.benchmark == *bench
                    && r.averaging == Averaging::Weighted
                    && r.group != "averaged"
                    && r.group != "pooled"
            })
            .map(|r| r.group.clone())
            .collect();
        groups.sort();
        groups.dedup();
        if groups.len() > 1 {
            let _ = writeln!(out);
            let _ = writeln!(out, "### Accuracy by group");
            let _ = writeln!(out);
            let header: Vec<String> = strategies.iter().map(|s| s.to_string()).collect();
            let _ = writeln!(out, "| group | {} |", header.join(" | "));
            let _ = writeln!(out, "|---|{}", "---|".repeat(strategies.len()));
            for group in &groups {
                let cells: Vec<String> = strategies
                    .iter()
                    .map(|s| {
                        rows.iter()
                            .find(|r| {
                                r.benchmark == *bench
                                    && r.strategy == *s
                                    && r.group == *group
                                    && r.averaging == Averaging::Weighted
                            })
                            .map(|r| format!("{:.3}", r.accuracy))
                            .unwrap_or_else(|| "—".into())
                    })
                    .collect();
                let _ = writeln!(out, "| {group} | {} |", cells.join(" | "));
            }
        }

        // flag rates from the raw records
        let with_records: Vec<(&Strategy, &Vec<RunRecord>)> = records
            .iter()
            .filter(|((b, _), _)| b == bench)
            .map(|((_, s), recs)| (s, recs))
            .collect();
        if !with_records.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "### Flag rates");
            let _ = writeln!(out);
            let names: Vec<&str> = FLAG_COLUMNS.iter().map(|(_, n)| *n).collect();
            let _ = writeln!(out, "| strategy | {} |", names.join(" | "));
            let _ = writeln!(out, "|---|{}", "---|".repeat(FLAG_COLUMNS.len()));
            for (strategy, recs) in with_records {
                let total = recs.len().max(1);
                let cells: Vec<String> = FLAG_COLUMNS
                    .iter()
                    .map(|(flag, _)| {
                        let n = recs.iter().filter(|r| r.flags.contains(flag)).count();
                        format!("{:.1}%", 100.0 * n as f64 / total as f64)
                    })
                    .collect();
                let _ = writeln!(out, "| {strategy} | {} |", cells.join(" | "));
            }
        }
    }

    let report_path = run_dir.join("report.md");
    std::fs::write(&report_path, &out).map_err(|e| io_err(&report_path, e))?;
    Ok(out)
}
