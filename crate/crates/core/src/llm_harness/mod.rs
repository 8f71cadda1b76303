//! Chat-completion harness: sends rendered prompts, records responses with
//! timing, runs batch plans with resume, and summarizes generation stats.

mod batch;
mod clock;
mod stats;
mod store;
mod transport;

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::event_log::SessionKey;
use crate::promptgen::{check_context_fit, PromptBundle, TaskKind};

pub use batch::{run_batch, BatchError, BatchInputs, BatchOutcome, BatchPlan, PlanItem, PlanSpec};
pub use clock::{Clock, ManualClock, SystemClock};
pub use stats::{generation_stats, ModelStats, StatsTable};
pub use store::{RecordStore, StoreError};
pub use transport::{
    CacheTransport, ChatMessage, ChatRequest, HttpTransport, MockTransport, Transport, TransportError,
};

fn default_temperature() -> f64 {
    0.0
}
fn default_max_response_tokens() -> u32 {
    1024
}
fn default_timeout_ms() -> u64 {
    120_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_reserve_tokens() -> usize {
    1024
}
fn default_concurrency() -> usize {
    2
}
fn default_backoff_ms() -> u64 {
    500
}

/// One model endpoint. API keys are read from `auth_env_var` at call time
/// and never stored in configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_id: String,
    pub endpoint: String,
    #[serde(default)]
    pub auth_env_var: Option<String>,
    pub window_tokens: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_response_tokens")]
    pub max_response_tokens: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Tokens kept free for the response when checking context fit.
    #[serde(default = "default_reserve_tokens")]
    pub reserve_tokens: usize,
    /// Maximum in-flight requests to this model during a batch.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// Base delay of the exponential retry backoff.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl ModelConfig {
    pub fn new(model_id: impl Into<String>, endpoint: impl Into<String>, window_tokens: usize) -> Self {
        ModelConfig {
            model_id: model_id.into(),
            endpoint: endpoint.into(),
            auth_env_var: None,
            window_tokens,
            temperature: default_temperature(),
            max_response_tokens: default_max_response_tokens(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            reserve_tokens: default_reserve_tokens(),
            concurrency: default_concurrency(),
            backoff_ms: default_backoff_ms(),
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.window_tokens == 0 {
            return Err(format!("model {}: window_tokens must be positive", self.model_id));
        }
        if self.model_id.is_empty() {
            return Err("model_id must not be empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub record_id: String,
    pub session: SessionKey,
    pub task: TaskKind,
    pub model_id: String,
    pub prompt_hash: String,
    pub response_text: String,
    pub latency_ms: u64,
    pub response_chars: usize,
    pub created_ts: i64,
    pub status: GenerationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_detail: Option<String>,
    /// Transport calls made, including retries. Zero when nothing was sent.
    pub attempts: u32,
    /// Number of steps in the prompt the response was generated from.
    pub step_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_range: Option<(usize, usize)>,
}

impl GenerationRecord {
    pub fn is_ok(&self) -> bool {
        self.status == GenerationStatus::Ok
    }
}

pub const PROMPT_TOO_LONG: &str = "prompt too long";

/// SHA-256 of the prompt text, lowercase hex.
pub fn prompt_hash(prompt_text: &str) -> String {
    let digest = Sha256::digest(prompt_text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn id_part(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-') { c } else { '-' })
        .collect()
}

/// `<subject>_<assignment>_<task>_<model>`, with a `_s<from>-<to>` suffix for
/// step-range generations.
pub fn record_id(session: &SessionKey, task: TaskKind, model_id: &str, step_range: Option<(usize, usize)>) -> String {
    let mut id = format!(
        "{}_{}_{}_{}",
        id_part(&session.subject_id),
        id_part(&session.assignment_id),
        task,
        id_part(model_id)
    );
    if let Some((from, to)) = step_range {
        id.push_str(&format!("_s{from}-{to}"));
    }
    id
}

#[derive(Debug, Clone, Default)]
pub struct CompleteOptions {
    /// Send even when the prompt does not fit the model's context window.
    pub override_fit: bool,
    pub step_range: Option<(usize, usize)>,
}

/// Sends prompts through a [`Transport`] with retries, timing and optional
/// global rate limiting.
#[derive(Clone)]
pub struct Harness {
    transport: Arc<dyn Transport>,
    clock: Arc<dyn Clock>,
    min_interval_ms: u64,
    last_start: Arc<Mutex<Option<u64>>>,
}

impl Harness {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self::with_clock(transport, Arc::new(SystemClock::new()))
    }

    pub fn with_clock(transport: Arc<dyn Transport>, clock: Arc<dyn Clock>) -> Self {
        Harness {
            transport,
            clock,
            min_interval_ms: 0,
            last_start: Arc::new(Mutex::new(None)),
        }
    }

    /// Minimum spacing between consecutive request starts, across all models.
    pub fn with_rate_limit(mut self, min_interval_ms: u64) -> Self {
        self.min_interval_ms = min_interval_ms;
        self
    }

    pub fn transport(&self) -> &Arc<dyn Transport> {
        &self.transport
    }

    fn throttle(&self) {
        if self.min_interval_ms == 0 {
            return;
        }
        let mut last = self.last_start.lock().expect("rate limiter poisoned");
        let now = self.clock.monotonic_ms();
        if let Some(prev) = *last {
            let due = prev + self.min_interval_ms;
            if now < due {
                self.clock.sleep_ms(due - now);
            }
        }
        *last = Some(self.clock.monotonic_ms());
    }

    /// Generates one response. Failures are encoded in the record.
    pub fn complete(&self, config: &ModelConfig, bundle: &PromptBundle, opts: &CompleteOptions) -> GenerationRecord {
        let mut record = GenerationRecord {
            record_id: record_id(&bundle.session, bundle.task, &config.model_id, opts.step_range),
            session: bundle.session.clone(),
            task: bundle.task,
            model_id: config.model_id.clone(),
            prompt_hash: prompt_hash(&bundle.prompt_text),
            response_text: String::new(),
            latency_ms: 0,
            response_chars: 0,
            created_ts: self.clock.now_ms(),
            status: GenerationStatus::Error,
            error_detail: None,
            attempts: 0,
            step_count: bundle.step_count,
            step_range: opts.step_range,
        };

        if !opts.override_fit && !check_context_fit(bundle, config).fits {
            record.error_detail = Some(PROMPT_TOO_LONG.to_owned());
            return record;
        }

        let request = ChatRequest::single_user(config, &bundle.prompt_text);
        let started = self.clock.monotonic_ms();
        let outcome = loop {
            self.throttle();
            record.attempts += 1;
            match self.transport.send(config, &request) {
                Ok(text) => break Ok(text),
                Err(TransportError::Transient(detail)) if record.attempts <= config.max_retries => {
                    let backoff = config.backoff_ms.saturating_mul(1 << (record.attempts - 1).min(20));
                    log_retry(&record.record_id, record.attempts, &detail);
                    self.clock.sleep_ms(backoff);
                }
                Err(e) => break Err(e),
            }
        };
        record.latency_ms = self.clock.monotonic_ms().saturating_sub(started);

        match outcome {
            Ok(text) if !text.is_empty() => {
                record.response_chars = text.chars().count();
                record.response_text = text;
                record.status = GenerationStatus::Ok;
            }
            Ok(_) => record.error_detail = Some("empty response".into()),
            Err(e) => {
                let detail = match e {
                    TransportError::Transient(d) => format!("retries exhausted after {} attempts: {d}", record.attempts),
                    TransportError::Fatal(d) => d,
                };
                record.error_detail = Some(detail);
            }
        }
        record
    }
}

fn log_retry(record_id: &str, attempt: u32, detail: &str) {
    if std::env::var_os("PROCLENS_VERBOSE").is_some() {
        eprintln!("{record_id}: attempt {attempt} failed ({detail}), retrying");
    }
}
