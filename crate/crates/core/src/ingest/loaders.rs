//! The four benchmark loaders and their allocation helpers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::model::{canonical_label, LabelId, Sample, TaskKind, TaskSpec};

use super::{BenchmarkName, BenchmarkSet, IngestError, Provenance, SubsampleReport};

/// JSONL record for the attack-tagged benchmarks and DDXPlus.
#[derive(Debug, Deserialize)]
struct JsonlRow {
    id: String,
    text: String,
    label: String,
    #[serde(default)]
    attack: Option<String>,
    #[serde(default)]
    task: Option<String>,
}

const PROMPTROBUST_ATTACKS: [&str; 5] = [
    "textfooler",
    "bertattack",
    "semantic",
    "textbugger",
    "deepwordbug",
];

/// Canonical attack names: lowercase alphanumeric, with the paper's
/// abbreviations folded in ("deepwb", "bert-attack", "textbug").
fn normalize_attack(tag: &str) -> String {
    let folded: String = tag
        .trim()
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric())
        .collect();
    match folded.as_str() {
        "bert" => "bertattack".to_string(),
        "deepwb" => "deepwordbug".to_string(),
        "textbug" => "textbugger".to_string(),
        _ => folded,
    }
}

fn file_digest(path: &Path) -> Result<(Vec<u8>, String), IngestError> {
    let bytes = std::fs::read(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let digest = hex::encode(Sha256::digest(&bytes));
    Ok((bytes, digest))
}

fn parse_jsonl(path: &Path, bytes: &[u8]) -> Result<Vec<JsonlRow>, IngestError> {
    let text = String::from_utf8_lossy(bytes);
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: JsonlRow = serde_json::from_str(line).map_err(|e| IngestError::BadRow {
            path: path.display().to_string(),
            line: lineno + 1,
            detail: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

fn check_unique_ids(samples: &[Sample]) -> Result<(), IngestError> {
    let mut seen = BTreeSet::new();
    for s in samples {
        if !seen.insert(s.id.as_str()) {
            return Err(IngestError::DuplicateId(s.id.clone()));
        }
    }
    Ok(())
}

fn resolve_gold(
    raw: &str,
    spec: &TaskSpec,
    path: &Path,
    row_id: &str,
) -> Result<LabelId, IngestError> {
    canonical_label(raw, spec).ok_or_else(|| IngestError::BadRow {
        path: path.display().to_string(),
        line: 0,
        detail: format!("row {row_id:?}: label {raw:?} not in {} label space", spec.kind),
    })
}

/// Largest-remainder allocation of `n_total` across groups, proportional to
/// group sizes. Integer arithmetic; remainder ties break by group name.
fn proportional_allocation(
    counts: &BTreeMap<String, usize>,
    n_total: usize,
) -> BTreeMap<String, usize> {
    let total: usize = counts.values().sum();
    if total == 0 || n_total == 0 {
        return counts.keys().map(|g| (g.clone(), 0)).collect();
    }
    let mut alloc: BTreeMap<String, usize> = BTreeMap::new();
    // (remainder, group) sorted descending by remainder then ascending name
    let mut remainders: Vec<(usize, &String)> = Vec::new();
    let mut assigned = 0usize;
    for (group, &count) in counts {
        let exact_num = n_total * count;
        let floor = exact_num / total;
        alloc.insert(group.clone(), floor);
        assigned += floor;
        remainders.push((exact_num % total, group));
    }
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    for (_, group) in remainders.into_iter().take(n_total - assigned) {
        *alloc.get_mut(group).expect("group present") += 1;
    }
    alloc
}

/// Equal split with round-robin remainder: groups in lexicographic order,
/// the first `n_total % k` get one extra.
fn equal_allocation(groups: &BTreeSet<String>, n_total: usize) -> BTreeMap<String, usize> {
    let k = groups.len();
    if k == 0 {
        return BTreeMap::new();
    }
    let base = n_total / k;
    let rem = n_total % k;
    groups
        .iter()
        .enumerate()
        .map(|(i, g)| (g.clone(), base + usize::from(i < rem)))
        .collect()
}

/// Pick `quota` indices uniformly without replacement from `pool`, keeping
/// source order among the picks.
fn draw_in_order(pool: &[usize], quota: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    debug_assert!(quota <= pool.len());
    let mut picks: Vec<usize> = rand::seq::index::sample(rng, pool.len(), quota)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picks.sort_unstable();
    picks
}

/// Load the PromptRobust SST-2 split: proportional representation of the
/// five attack types, seeded uniform draw within each.
pub fn load_promptrobust(
    path: &Path,
    n_total: usize,
    seed: u64,
) -> Result<(BenchmarkSet, SubsampleReport), IngestError> {
    let (bytes, source_digest) = file_digest(path)?;
    let rows = parse_jsonl(path, &bytes)?;
    let spec = TaskSpec::builtin(TaskKind::Sst2);

    let mut all = Vec::with_capacity(rows.len());
    for row in &rows {
        let attack = normalize_attack(row.attack.as_deref().unwrap_or(""));
        if !PROMPTROBUST_ATTACKS.contains(&attack.as_str()) {
            return Err(IngestError::UnknownAttack {
                tag: row.attack.clone().unwrap_or_default(),
                row: row.id.clone(),
            });
        }
        if let Some(task) = &row.task {
            let kind: TaskKind = task.parse()?;
            if kind != TaskKind::Sst2 {
                return Err(IngestError::BadRow {
                    path: path.display().to_string(),
                    line: 0,
                    detail: format!("row {:?}: task {kind} not valid for promptrobust-sst2", row.id),
                });
            }
        }
        let sample = Sample {
            id: row.id.clone(),
            text: row.text.clone(),
            gold: resolve_gold(&row.label, spec, path, &row.id)?,
            task: TaskKind::Sst2,
            group: attack,
        };
        sample.validate(spec)?;
        all.push(sample);
    }
    check_unique_ids(&all)?;

    if n_total > all.len() {
        return Err(IngestError::NTotalTooLarge {
            requested: n_total,
            available: all.len(),
        });
    }

    let mut group_indices: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in all.iter().enumerate() {
        group_indices.entry(s.group.clone()).or_default().push(i);
    }
    let counts: BTreeMap<String, usize> = group_indices
        .iter()
        .map(|(g, v)| (g.clone(), v.len()))
        .collect();
    let alloc = proportional_allocation(&counts, n_total);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected: Vec<usize> = Vec::with_capacity(n_total);
    for (group, pool) in &group_indices {
        let quota = alloc[group];
        selected.extend(draw_in_order(pool, quota, &mut rng));
    }
    selected.sort_unstable();
    let samples: Vec<Sample> = selected.into_iter().map(|i| all[i].clone()).collect();

    let report = SubsampleReport::tally(&samples, all.len());
    let set = BenchmarkSet {
        name: BenchmarkName::PromptrobustSst2,
        kind: BenchmarkName::PromptrobustSst2.kind(),
        samples,
        provenance: Provenance {
            source_digest,
            rule: "proportional-by-attack/v1".into(),
            seed,
        },
    };
    Ok((set, report))
}

/// Load AdvGLUE++: equal samples per attack type (round-robin remainder by
/// attack name), GLUE task resolved per sample.
pub fn load_advglue(
    path: &Path,
    n_total: usize,
    seed: u64,
) -> Result<(BenchmarkSet, SubsampleReport), IngestError> {
    let (bytes, source_digest) = file_digest(path)?;
    let rows = parse_jsonl(path, &bytes)?;

    let mut all = Vec::with_capacity(rows.len());
    for row in &rows {
        let attack = normalize_attack(row.attack.as_deref().unwrap_or(""));
        if attack.is_empty() {
            return Err(IngestError::UnknownAttack {
                tag: row.attack.clone().unwrap_or_default(),
                row: row.id.clone(),
            });
        }
        let task: TaskKind = row
            .task
            .as_deref()
            .ok_or_else(|| IngestError::BadRow {
                path: path.display().to_string(),
                line: 0,
                detail: format!("row {:?}: missing task tag", row.id),
            })?
            .parse()?;
        if !matches!(task, TaskKind::Sst2 | TaskKind::Mnli | TaskKind::Qnli | TaskKind::Qqp) {
            return Err(IngestError::BadRow {
                path: path.display().to_string(),
                line: 0,
                detail: format!("row {:?}: task {task} not a GLUE task", row.id),
            });
        }
        let spec = TaskSpec::builtin(task);
        let sample = Sample {
            id: row.id.clone(),
            text: row.text.clone(),
            gold: resolve_gold(&row.label, spec, path, &row.id)?,
            task,
            group: attack,
        };
        sample.validate(spec)?;
        all.push(sample);
    }
    check_unique_ids(&all)?;

    if n_total > all.len() {
        return Err(IngestError::NTotalTooLarge {
            requested: n_total,
            available: all.len(),
        });
    }

    let mut group_indices: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in all.iter().enumerate() {
        group_indices.entry(s.group.clone()).or_default().push(i);
    }
    let groups: BTreeSet<String> = group_indices.keys().cloned().collect();
    let alloc = equal_allocation(&groups, n_total);

    let deficits: Vec<(String, usize, usize)> = alloc
        .iter()
        .filter(|(g, quota)| group_indices[*g].len() < **quota)
        .map(|(g, quota)| (g.clone(), *quota, group_indices[g].len()))
        .collect();
    if !deficits.is_empty() {
        return Err(IngestError::GroupDeficit(deficits));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected: Vec<usize> = Vec::with_capacity(n_total);
    for (group, pool) in &group_indices {
        selected.extend(draw_in_order(pool, alloc[group], &mut rng));
    }
    selected.sort_unstable();
    let samples: Vec<Sample> = selected.into_iter().map(|i| all[i].clone()).collect();

    let report = SubsampleReport::tally(&samples, all.len());
    let set = BenchmarkSet {
        name: BenchmarkName::AdvgluePlusPlus,
        kind: BenchmarkName::AdvgluePlusPlus.kind(),
        samples,
        provenance: Provenance {
            source_digest,
            rule: "equal-by-attack/v1".into(),
            seed,
        },
    };
    Ok((set, report))
}

/// Character count bounds for Flipkart reviews, inclusive, in Unicode
/// scalar values.
pub const FLIPKART_MIN_CHARS: usize = 150;
pub const FLIPKART_MAX_CHARS: usize = 160;
pub const FLIPKART_CAP: usize = 300;

#[derive(Debug, Deserialize)]
struct FlipkartRow {
    text: String,
    label: String,
}

/// Load Flipkart reviews: keep texts of 150–160 characters in source order
/// and truncate to the first 300 survivors.
pub fn load_flipkart(path: &Path) -> Result<(BenchmarkSet, SubsampleReport), IngestError> {
    let (bytes, source_digest) = file_digest(path)?;
    let spec = TaskSpec::builtin(TaskKind::FlipkartSentiment);

    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let mut input_count = 0usize;
    let mut samples: Vec<Sample> = Vec::new();
    let mut kept = 0usize;
    for (idx, result) in reader.deserialize::<FlipkartRow>().enumerate() {
        let row = result.map_err(|e| IngestError::BadRow {
            path: path.display().to_string(),
            line: idx + 2,
            detail: e.to_string(),
        })?;
        input_count += 1;
        let len = row.text.chars().count();
        if !(FLIPKART_MIN_CHARS..=FLIPKART_MAX_CHARS).contains(&len) {
            continue;
        }
        kept += 1;
        if samples.len() >= FLIPKART_CAP {
            continue; // count survivors but keep only the prefix
        }
        let id = format!("flipkart-{:06}", idx + 1);
        let sample = Sample {
            id: id.clone(),
            text: row.text,
            gold: resolve_gold(&row.label, spec, path, &id)?,
            task: TaskKind::FlipkartSentiment,
            group: "none".into(),
        };
        sample.validate(spec)?;
        samples.push(sample);
    }

    if samples.is_empty() {
        return Err(IngestError::EmptyAfterFilter(format!(
            "no reviews between {FLIPKART_MIN_CHARS} and {FLIPKART_MAX_CHARS} characters"
        )));
    }
    check_unique_ids(&samples)?;

    let mut report = SubsampleReport::tally(&samples, input_count);
    if kept > FLIPKART_CAP {
        report.warnings.push(format!(
            "{kept} reviews matched the length filter; kept the first {FLIPKART_CAP}"
        ));
    }
    let set = BenchmarkSet {
        name: BenchmarkName::Flipkart,
        kind: BenchmarkName::Flipkart.kind(),
        samples,
        provenance: Provenance {
            source_digest,
            rule: "length-150-160-first-300/v1".into(),
            seed: 0,
        },
    };
    Ok((set, report))
}

/// Expected DDXPlus benchmark size; a different count loads with a warning.
pub const DDXPLUS_EXPECTED: usize = 100;

/// Load DDXPlus verbatim: every row, labels validated against the 48-disease
/// space, warning when the count is not 100.
pub fn load_ddxplus(path: &Path) -> Result<(BenchmarkSet, SubsampleReport), IngestError> {
    let (bytes, source_digest) = file_digest(path)?;
    let rows = parse_jsonl(path, &bytes)?;
    let spec = TaskSpec::builtin(TaskKind::DdxplusDiagnosis);

    let mut samples = Vec::with_capacity(rows.len());
    for row in &rows {
        let sample = Sample {
            id: row.id.clone(),
            text: row.text.clone(),
            gold: resolve_gold(&row.label, spec, path, &row.id)?,
            task: TaskKind::DdxplusDiagnosis,
            group: "none".into(),
        };
        sample.validate(spec)?;
        samples.push(sample);
    }
    check_unique_ids(&samples)?;

    let mut report = SubsampleReport::tally(&samples, rows.len());
    if samples.len() != DDXPLUS_EXPECTED {
        let msg = format!(
            "expected {DDXPLUS_EXPECTED} samples, found {}",
            samples.len()
        );
        log::warn!("ddxplus: {msg}");
        report.warnings.push(msg);
    }
    let set = BenchmarkSet {
        name: BenchmarkName::Ddxplus,
        kind: BenchmarkName::Ddxplus.kind(),
        samples,
        provenance: Provenance {
            source_digest,
            rule: "verbatim-100/v1".into(),
            seed: 0,
        },
    };
    Ok((set, report))
}
