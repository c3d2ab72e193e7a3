//! Uniform text-generation interface over remote chat-completion endpoints
//! and a deterministic scripted backend for tests, with caching, retry, and
//! bounded concurrency.

mod backend;
mod cache;
mod scripted;

pub use backend::{CountingBackend, HttpBackend, HttpConfig, TextBackend};
pub use cache::ResponseCache;
pub use scripted::{script_entry, ScriptEntry, ScriptMode, ScriptedBackend};

use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::stream::{self, StreamExt};

use crate::model::StepTag;

pub const DEFAULT_MAX_TOKENS: u32 = 512;

/// One text-generation request. Temperature defaults to 0 so scripted and
/// cached runs stay reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct GenRequest {
    pub system: Option<String>,
    pub user: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub tag: StepTag,
}

impl GenRequest {
    pub fn new(tag: StepTag, user: impl Into<String>) -> Self {
        GenRequest {
            system: None,
            user: user.into(),
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: 0.0,
            tag,
        }
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system = Some(system.into());
        self
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.user.is_empty() {
            return Err(GatewayError::InvalidRequest("empty user message".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Response text plus provenance: which attempt produced it and whether it
/// came from the cache.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenResponse {
    pub text: String,
    pub latency_ms: u64,
    pub attempt: u32,
    pub cached: bool,
}

/// Errors a backend can raise on a single call.
#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("http {status}: {body}")]
    Http { status: u16, body: String },
    #[error("token limit exceeded: {0}")]
    TokenLimit(String),
    #[error("script miss: {0}")]
    ScriptMiss(String),
}

impl BackendError {
    /// Only transport failures and 5xx-class responses are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status >= 500,
            BackendError::TokenLimit(_) | BackendError::ScriptMiss(_) => false,
        }
    }
}

/// Errors surfaced by the gateway after its retry policy ran out.
#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("exhausted {attempts} attempts, last error: {last}")]
    ExhaustedRetries { attempts: u32, last: BackendError },
    #[error(transparent)]
    Backend(BackendError),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Retry on transient failures with doubling backoff (defaults: 3 attempts,
/// 1s/2s/4s).
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

/// Shared front door to a text-generation backend. Cloning is cheap; all
/// clones share the backend, cache, and retry policy.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn TextBackend>,
    retry: RetryPolicy,
    cache: Option<Arc<ResponseCache>>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn TextBackend>) -> Self {
        Gateway {
            backend,
            retry: RetryPolicy::default(),
            cache: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(Arc::new(cache));
        self
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    /// Generate text for one request, consulting the cache first and
    /// retrying transient failures. Identical in-flight requests are
    /// deduplicated so a warm-or-warming cache issues one backend call.
    pub async fn generate(&self, req: &GenRequest) -> Result<GenResponse, GatewayError> {
        req.validate()?;
        let Some(cache) = &self.cache else {
            return self.call_with_retry(req).await;
        };

        let key = cache.key(&self.backend.id(), req);
        let keylock = cache.lock_for(&key);
        let _guard = keylock.lock().await;
        if let Some(hit) = cache.read(&key) {
            return Ok(GenResponse {
                text: hit.text,
                latency_ms: 0,
                attempt: hit.attempt,
                cached: true,
            });
        }
        let resp = self.call_with_retry(req).await?;
        cache.write(&key, &self.backend.id(), req, &resp);
        Ok(resp)
    }

    /// Run many requests with at most `max_in_flight` outstanding at once.
    /// Responses come back in request order; per-item failures are reported
    /// positionally and never abort the batch.
    pub async fn batched_generate(
        &self,
        reqs: &[GenRequest],
        max_in_flight: usize,
    ) -> Vec<Result<GenResponse, GatewayError>> {
        let limit = max_in_flight.max(1);
        stream::iter(reqs)
            .map(|req| self.generate(req))
            .buffered(limit)
            .collect()
            .await
    }

    async fn call_with_retry(&self, req: &GenRequest) -> Result<GenResponse, GatewayError> {
        let start = Instant::now();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.backend.generate(req).await {
                Ok(text) => {
                    return Ok(GenResponse {
                        text,
                        latency_ms: start.elapsed().as_millis() as u64,
                        attempt,
                        cached: false,
                    });
                }
                Err(err) if !err.is_retryable() => {
                    return Err(GatewayError::Backend(err));
                }
                Err(err) => {
                    if attempt >= self.retry.max_attempts {
                        return Err(GatewayError::ExhaustedRetries {
                            attempts: attempt,
                            last: err,
                        });
                    }
                    let backoff = self.retry.initial_backoff * 2u32.pow(attempt - 1);
                    log::debug!("attempt {attempt} failed ({err}), backing off {backoff:?}");
                    tokio::time::sleep(backoff).await;
                }
            }
        }
    }
}
