//! Backend trait plus the remote chat-completion client and a
//! call-counting wrapper for instrumented tests.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;

use super::{BackendError, GenRequest};

/// A text-generation backend: one request in, one text out.
#[async_trait]
pub trait TextBackend: Send + Sync {
    async fn generate(&self, req: &GenRequest) -> Result<String, BackendError>;

    /// Stable identifier mixed into cache keys, so swapping models or
    /// scripts invalidates cached responses naturally.
    fn id(&self) -> String;
}

/// Remote chat-completion endpoint configuration. The auth token is read
/// from the named environment variable at request time, never stored.
#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL up to the API root, e.g. `https://host/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub timeout: Duration,
}

/// Client for an OpenAI-style `POST {base}/chat/completions` endpoint. The
/// prompt text goes in the user message; `system` is sent as its own role
/// when present.
pub struct HttpBackend {
    cfg: HttpConfig,
    client: reqwest::Client,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpBackend { cfg, client })
    }

    fn bearer(&self) -> Option<String> {
        self.cfg
            .auth_env
            .as_ref()
            .and_then(|var| std::env::var(var).ok())
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

fn looks_like_token_limit(body: &str) -> bool {
    let lower = body.to_lowercase();
    lower.contains("context_length")
        || lower.contains("context length")
        || lower.contains("maximum token")
        || lower.contains("too many tokens")
}

#[async_trait]
impl TextBackend for HttpBackend {
    async fn generate(&self, req: &GenRequest) -> Result<String, BackendError> {
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let mut messages = Vec::new();
        if let Some(system) = &req.system {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": req.user}));
        let body = json!({
            "model": self.cfg.model,
            "messages": messages,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        });

        let mut request = self.client.post(&url).json(&body);
        if let Some(token) = self.bearer() {
            request = request.bearer_auth(token);
        }
        let response = request
            .send()
            .await
            .map_err(|e| BackendError::Transport(e.to_string()))?;

        let status = response.status().as_u16();
        let text = response
            .text()
            .await
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            if looks_like_token_limit(&text) {
                return Err(BackendError::TokenLimit(text));
            }
            return Err(BackendError::Http { status, body: text });
        }

        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| BackendError::Http {
            status,
            body: format!("unparseable chat response ({e}): {text}"),
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| BackendError::Http {
                status,
                body: "chat response had no choices".into(),
            })
    }

    fn id(&self) -> String {
        format!("http:{}:{}", self.cfg.base_url, self.cfg.model)
    }
}

/// Wrapper that counts backend calls; used to observe cache behavior.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl<B: TextBackend> TextBackend for CountingBackend<B> {
    async fn generate(&self, req: &GenRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.generate(req).await
    }

    fn id(&self) -> String {
        self.inner.id()
    }
}
