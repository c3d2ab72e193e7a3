//! Run identity and persistence scaffolding: input digests, the manifest
//! written beside every run, and the per-output-dir lock.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ingest::Provenance;

use super::{io_err, ExperimentConfig, HarnessError};

/// Everything needed to replay a run: the full config inline, digests of
/// every input, and what was skipped. The identity digest covers config,
/// prompt files, exemplar files, script, and benchmark sources — any change
/// produces a different run identity. Timestamps stay out of it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub created_utc: String,
    pub tool_version: String,
    pub model: String,
    pub seed: u64,
    pub identity_digest: String,
    pub input_digests: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skips: Vec<String>,
    pub benchmarks: BTreeMap<String, BenchmarkInfo>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkInfo {
    pub provenance: Provenance,
    pub sample_count: usize,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn file_sha256(path: &Path) -> Result<String, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Collect input digests and fold them into one identity digest. The map
/// iterates in key order, so the fold is deterministic.
pub(crate) fn identity_digest(input_digests: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (name, digest) in input_digests {
        h.update(name.as_bytes());
        h.update(b"=");
        h.update(digest.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Exclusive lock on an output directory: one experiment process at a time.
/// The lock file is removed on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join(".lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(HarnessError::Locked(path.display().to_string()))
            }
            Err(e) => Err(io_err(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released_on_drop() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        let second = DirLock::acquire(dir.path());
        assert!(matches!(second, Err(HarnessError::Locked(_))));
        drop(lock);
        DirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn identity_digest_changes_with_any_input()  {
        let mut inputs = BTreeMap::new();
        inputs.insert("config".to_string(), "aaaa".to_string());
        inputs.insert("script".to_string(), "bbbb".to_string());
        let base = identity_digest(&inputs);
        inputs.insert("script".to_string(), "cccc".to_string());
        assert_ne!(identity_digest(&inputs), base);
        inputs.insert("script".to_string(), "bbbb".to_string());
        assert_eq!(identity_digest(&inputs), base);
    }
}
