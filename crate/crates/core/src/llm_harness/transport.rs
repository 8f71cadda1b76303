use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{prompt_hash, ModelConfig, RecordStore, StoreError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Chat-completions request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// The whole prompt as one user-role message; no system message.
    pub fn single_user(config: &ModelConfig, prompt: &str) -> Self {
        ChatRequest {
            model: config.model_id.clone(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt.to_owned(),
            }],
            temperature: config.temperature,
            max_tokens: config.max_response_tokens,
        }
    }

    pub fn prompt(&self) -> &str {
        self.messages.first().map(|m| m.content.as_str()).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    /// Worth retrying: timeouts, connection failures, 429 and 5xx.
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Fatal(String),
}

pub trait Transport: Send + Sync {
    /// Returns the response text of the first choice.
    fn send(&self, config: &ModelConfig, request: &ChatRequest) -> Result<String, TransportError>;
}

/// Blocking HTTP client for chat-completions endpoints with bearer auth.
#[derive(Debug, Default)]
pub struct HttpTransport;

impl HttpTransport {
    pub fn new() -> Self {
        HttpTransport
    }
}

impl Transport for HttpTransport {
    fn send(&self, config: &ModelConfig, request: &ChatRequest) -> Result<String, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(&config.endpoint).header("Content-Type", "application/json");
        if let Some(var) = &config.auth_env_var {
            let key = std::env::var(var)
                .map_err(|_| TransportError::Fatal(format!("environment variable {var} is not set")))?;
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::to_vec(request).map_err(|e| TransportError::Fatal(e.to_string()))?;
        let mut resp = req.send(&body[..]).map_err(classify_ureq)?;

        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Transient(format!("reading response body: {e}")))?;
        if status == 429 || status >= 500 {
            return Err(TransportError::Transient(format!("HTTP {status}: {}", truncate(&text))));
        }
        if !(200..300).contains(&status) {
            return Err(TransportError::Fatal(format!("HTTP {status}: {}", truncate(&text))));
        }
        first_choice_text(&text)
    }
}

fn classify_ureq(err: ureq::Error) -> TransportError {
    match err {
        ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
            TransportError::Transient(err.to_string())
        }
        other => TransportError::Fatal(other.to_string()),
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(300).collect()
}

/// Extracts `choices[0].message.content` from a chat-completions response.
pub(crate) fn first_choice_text(body: &str) -> Result<String, TransportError> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| TransportError::Fatal(format!("invalid response JSON: {e}")))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| TransportError::Fatal("response has no choices[0].message.content".into()))
}

/// Serves responses recorded earlier, keyed by model and prompt hash.
#[derive(Debug, Default)]
pub struct CacheTransport {
    by_hash: HashMap<(String, String), String>,
}

impl CacheTransport {
    pub fn from_store(store: &RecordStore) -> Result<Self, StoreError> {
        let by_hash = store
            .list()?
            .into_iter()
            .filter(|r| r.is_ok())
            .map(|r| ((r.model_id, r.prompt_hash), r.response_text))
            .collect();
        Ok(CacheTransport { by_hash })
    }

    pub fn len(&self) -> usize {
        self.by_hash.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_hash.is_empty()
    }
}

impl Transport for CacheTransport {
    fn send(&self, config: &ModelConfig, request: &ChatRequest) -> Result<String, TransportError> {
        let key = (config.model_id.clone(), prompt_hash(request.prompt()));
        self.by_hash.get(&key).cloned().ok_or_else(|| {
            TransportError::Fatal(format!("cache miss for {} prompt {}", key.0, &key.1[..12]))
        })
    }
}

type Responder = Box<dyn Fn(&ChatRequest, usize) -> Result<String, TransportError> + Send + Sync>;

/// Deterministic in-process transport for tests and dry runs.
pub struct MockTransport {
    responder: Responder,
    calls: AtomicUsize,
}

impl MockTransport {
    /// `f` receives the request and the 0-based call number.
    pub fn new(f: impl Fn(&ChatRequest, usize) -> Result<String, TransportError> + Send + Sync + 'static) -> Self {
        MockTransport {
            responder: Box::new(f),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn fixed(text: &str) -> Self {
        let text = text.to_owned();
        Self::new(move |_, _| Ok(text.clone()))
    }

    /// Plays the outcomes in order, then keeps repeating the last one.
    pub fn scripted(outcomes: Vec<Result<String, TransportError>>) -> Self {
        assert!(!outcomes.is_empty(), "scripted mock needs at least one outcome");
        let queue = Mutex::new(VecDeque::from(outcomes));
        Self::new(move |_, _| {
            let mut q = queue.lock().expect("mock poisoned");
            if q.len() > 1 {
                q.pop_front().expect("non-empty")
            } else {
                q.front().cloned().expect("non-empty")
            }
        })
    }

    /// A canned response that depends only on the request, citing the
    /// first and last steps of the prompt.
    pub fn canned() -> Self {
        Self::new(|req, _| {
            let prompt = req.prompt();
            let steps = crate::promptgen::step_headers(prompt);
            let last = steps.last().copied().unwrap_or(1);
            let kind = if prompt.contains("Do not provide any suggestions") {
                "summary"
            } else {
                "feedback"
            };
            Ok(format!(
                "[{model}] Canned {kind}. You started at Step 001 and finished at Step {last:03}, \
                 working through {n} steps. (prompt {hash})",
                model = req.model,
                n = steps.len(),
                hash = &prompt_hash(prompt)[..12],
            ))
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for MockTransport {
    fn send(&self, _config: &ModelConfig, request: &ChatRequest) -> Result<String, TransportError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        (self.responder)(request, n)
    }
}

impl std::fmt::Debug for MockTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockTransport").field("calls", &self.calls()).finish()
    }
}
