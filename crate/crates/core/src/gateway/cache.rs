//! Content-addressed response cache: one JSON record per exchange, keyed by
//! the hash of (backend id, request). Reads treat corrupt or missing files
//! as misses; writes are atomic via temp-file rename.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GenRequest, GenResponse};

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct CacheRecord {
    pub backend_id: String,
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub user: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub text: String,
    pub attempt: u32,
}

pub struct ResponseCache {
    dir: PathBuf,
    // Per-key single-flight locks: concurrent identical requests serialize
    // so only the first one reaches the backend.
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(ResponseCache {
            dir,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub(crate) fn key(&self, backend_id: &str, req: &GenRequest) -> String {
        let mut h = Sha256::new();
        h.update(backend_id.as_bytes());
        h.update([0]);
        h.update(req.tag.as_str().as_bytes());
        h.update([0]);
        if let Some(system) = &req.system {
            h.update(system.as_bytes());
        }
        h.update([0]);
        h.update(req.user.as_bytes());
        h.update([0]);
        h.update(req.max_tokens.to_le_bytes());
        h.update(req.temperature.to_le_bytes());
        hex::encode(h.finalize())
    }

    pub(crate) fn lock_for(&self, key: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut locks = self.locks.lock().expect("cache lock map poisoned");
        locks.entry(key.to_string()).or_default().clone()
    }

    pub(crate) fn read(&self, key: &str) -> Option<CacheRecord> {
        let path = self.dir.join(format!("{key}.json"));
        let bytes = std::fs::read(path).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub(crate) fn write(&self, key: &str, backend_id: &str, req: &GenRequest, resp: &GenResponse) {
        let record = CacheRecord {
            backend_id: backend_id.to_string(),
            tag: req.tag.as_str().to_string(),
            system: req.system.clone(),
            user: req.user.clone(),
            max_tokens: req.max_tokens,
            temperature: req.temperature,
            text: resp.text.clone(),
            attempt: resp.attempt,
        };
        let path = self.dir.join(format!("{key}.json"));
        let tmp = self.dir.join(format!(".{key}.tmp"));
        let result = serde_json::to_vec_pretty(&record)
            .map_err(std::io::Error::other)
            .and_then(|bytes| std::fs::write(&tmp, bytes))
            .and_then(|()| std::fs::rename(&tmp, &path));
        if let Err(e) = result {
            // A failed cache write must not fail the request.
            log::warn!("cache write failed for {key}: {e}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{CountingBackend, Gateway, ScriptedBackend};
    use crate::gateway::script_entry as entry;
    use crate::model::StepTag;
    use std::sync::Arc as StdArc;

    fn scripted_echo() -> ScriptedBackend {
        ScriptedBackend::keyed(vec![entry(StepTag::Baseline, "", "fixed answer")], true)
    }

    #[tokio::test]
    async fn repeat_request_hits_cache_with_identical_text() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path()).unwrap();
        let gw = Gateway::new(StdArc::new(scripted_echo())).with_cache(cache);
        let req = GenRequest::new(StepTag::Baseline, "classify this");
        let first = gw.generate(&req).await.unwrap();
        let second = gw.generate(&req).await.unwrap();
        assert!(!first.cached);
        assert!(second.cached);
        assert_eq!(first.text, second.text);
    }

    #[tokio::test]
    async fn hundred_identical_requests_one_backend_call() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path()).unwrap();
        let counting = StdArc::new(CountingBackend::new(scripted_echo()));
        let gw = Gateway::new(counting.clone()).with_cache(cache);
        let reqs = vec![GenRequest::new(StepTag::Baseline, "same request"); 100];
        let out = gw.batched_generate(&reqs, 16).await;
        assert!(out.iter().all(|r| r.is_ok()));
        assert_eq!(counting.calls(), 1, "single-flight cache must dedupe identical requests");
    }

    #[tokio::test]
    async fn cache_is_transparent_to_text() {
        let dir = tempfile::tempdir().unwrap();
        let reqs: Vec<_> = (0..5)
            .map(|i| GenRequest::new(StepTag::Baseline, format!("q{i}")))
            .collect();

        let plain = Gateway::new(StdArc::new(scripted_echo()));
        let cached = Gateway::new(StdArc::new(scripted_echo()))
            .with_cache(ResponseCache::new(dir.path()).unwrap());

        let a: Vec<_> = plain
            .batched_generate(&reqs, 2)
            .await
            .into_iter()
            .map(|r| r.unwrap().text)
            .collect();
        let b: Vec<_> = cached
            .batched_generate(&reqs, 2)
            .await
            .into_iter()
            .map(|r| r.unwrap().text)
            .collect();
        assert_eq!(a, b);
    }

    #[tokio::test]
    async fn key_distinguishes_backend_and_params() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path()).unwrap();
        let base = GenRequest::new(StepTag::Baseline, "text");
        let k1 = cache.key("backend-a", &base);
        let k2 = cache.key("backend-b", &base);
        assert_ne!(k1, k2);
        let mut warmer = base.clone();
        warmer.temperature = 0.7;
        assert_ne!(cache.key("backend-a", &warmer), k1);
        let mut other_tag = base.clone();
        other_tag.tag = StepTag::Infer;
        assert_ne!(cache.key("backend-a", &other_tag), k1);
    }

    #[tokio::test]
    async fn batch_with_one_miss_reports_positionally() {
        let backend = ScriptedBackend::keyed(
            vec![entry(StepTag::Baseline, "good", "ok")],
            true,
        );
        let gw = Gateway::new(StdArc::new(backend));
        let reqs = vec![
            GenRequest::new(StepTag::Baseline, "good one"),
            GenRequest::new(StepTag::Baseline, "bad"),
            GenRequest::new(StepTag::Baseline, "another good one"),
        ];
        let out = gw.batched_generate(&reqs, 2).await;
        assert!(out[0].is_ok());
        assert!(out[1].is_err());
        assert!(out[2].is_ok());
    }
}
