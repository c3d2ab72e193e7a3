//! Deterministic scripted backend: replays canned responses keyed by
//! pipeline step and request content. The test oracle for pipeline state
//! machines, and the engine behind reproducible offline runs.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, GenRequest, TextBackend};
use crate::model::StepTag;

/// One script entry: match conditions plus the canned response.
///
/// `tag` restricts the entry to one pipeline step; `exact`/`contains` match
/// on the request's user text. Absent conditions match anything.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<StepTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    pub response: String,
}

impl ScriptEntry {
    pub fn matches(&self, req: &GenRequest) -> bool {
        if let Some(tag) = self.tag {
            if tag != req.tag {
                return false;
            }
        }
        if let Some(exact) = &self.exact {
            if req.user != *exact {
                return false;
            }
        }
        if let Some(contains) = &self.contains {
            if !req.user.contains(contains.as_str()) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptMode {
    /// Entries are consumed in order, one per request. Single-consumer:
    /// concurrent requests would race for the cursor.
    Sequential,
    /// Entries form an ordered pattern map; the first matching entry
    /// answers, entries are reusable. Safe under concurrency.
    Keyed,
}

pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    mode: ScriptMode,
    strict: bool,
    default_response: String,
    cursor: AtomicUsize,
    id: String,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>, mode: ScriptMode, strict: bool) -> Self {
        let mut hasher = Sha256::new();
        for e in &entries {
            hasher.update(serde_json::to_vec(e).expect("script entry serializes"));
            hasher.update(b"\n");
        }
        let id = format!("scripted:{}", hex::encode(&hasher.finalize()[..8]));
        ScriptedBackend {
            entries,
            mode,
            strict,
            default_response: String::new(),
            cursor: AtomicUsize::new(0),
            id,
        }
    }

    pub fn keyed(entries: Vec<ScriptEntry>, strict: bool) -> Self {
        Self::new(entries, ScriptMode::Keyed, strict)
    }

    pub fn sequential(entries: Vec<ScriptEntry>, strict: bool) -> Self {
        Self::new(entries, ScriptMode::Sequential, strict)
    }

    /// Response returned in non-strict mode when nothing matches.
    pub fn with_default_response(mut self, response: impl Into<String>) -> Self {
        self.default_response = response.into();
        self
    }

    /// Load a script from a JSONL file, one entry per line. Blank lines and
    /// `#` comment lines are skipped.
    pub fn from_jsonl_path(path: &Path, mode: ScriptMode, strict: bool) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Transport(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(line).map_err(|e| {
                BackendError::Transport(format!("{}:{}: bad script entry: {e}", path.display(), lineno + 1))
            })?;
            entries.push(entry);
        }
        Ok(Self::new(entries, mode, strict))
    }

    fn respond(&self, req: &GenRequest) -> Result<String, BackendError> {
        match self.mode {
            ScriptMode::Keyed => {
                if let Some(entry) = self.entries.iter().find(|e| e.matches(req)) {
                    return Ok(entry.response.clone());
                }
                self.miss(req)
            }
            ScriptMode::Sequential => {
                let idx = self.cursor.fetch_add(1, Ordering::SeqCst);
                match self.entries.get(idx) {
                    Some(entry) if !self.strict || entry.matches(req) => Ok(entry.response.clone()),
                    Some(entry) => Err(BackendError::ScriptMiss(format!(
                        "request (tag={}, user={:?}...) does not match script entry {idx} ({entry:?})",
                        req.tag,
                        truncate(&req.user, 60),
                    ))),
                    None => self.miss(req),
                }
            }
        }
    }

    fn miss(&self, req: &GenRequest) -> Result<String, BackendError> {
        if self.strict {
            Err(BackendError::ScriptMiss(format!(
                "no script entry for tag={} user={:?}",
                req.tag,
                truncate(&req.user, 80)
            )))
        } else {
            Ok(self.default_response.clone())
        }
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

#[async_trait]
impl TextBackend for ScriptedBackend {
    async fn generate(&self, req: &GenRequest) -> Result<String, BackendError> {
        self.respond(req)
    }

    fn id(&self) -> String {
        self.id.clone()
    }
}

/// Shorthand for building keyed entries in tests and configs.
pub fn script_entry(tag: StepTag, contains: &str, response: &str) -> ScriptEntry {
    ScriptEntry {
        tag: Some(tag),
        exact: None,
        contains: if contains.is_empty() {
            None
        } else {
            Some(contains.to_string())
        },
        response: response.to_string(),
    }
}
