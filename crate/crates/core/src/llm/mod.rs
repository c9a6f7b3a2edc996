//! Generative backends: an OpenAI-compatible HTTP chat client and a
//! deterministic rule-table mock, both with token accounting.

mod http;
mod mock;

use std::ops::{Add, AddAssign};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpSettings};
pub use mock::{MockBackend, MockRule, MockRules};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_RETRY_LIMIT: u32 = 3;
pub const DEFAULT_API_KEY_ENV: &str = "BFOREST_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub call_count: u64,
}

impl Add for TokenUsage {
    type Output = TokenUsage;
    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            input_tokens: self.input_tokens + rhs.input_tokens,
            output_tokens: self.output_tokens + rhs.output_tokens,
            call_count: self.call_count + rhs.call_count,
        }
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> Self {
        iter.fold(TokenUsage::default(), Add::add)
    }
}

/// Lock-free running total of [`TokenUsage`].
#[derive(Debug, Default)]
pub struct UsageCounter {
    input: AtomicU64,
    output: AtomicU64,
    calls: AtomicU64,
}

impl UsageCounter {
    pub fn record(&self, usage: TokenUsage) {
        self.input.fetch_add(usage.input_tokens, Ordering::Relaxed);
        self.output
            .fetch_add(usage.output_tokens, Ordering::Relaxed);
        self.calls.fetch_add(usage.call_count, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> TokenUsage {
        TokenUsage {
            input_tokens: self.input.load(Ordering::Relaxed),
            output_tokens: self.output.load(Ordering::Relaxed),
            call_count: self.calls.load(Ordering::Relaxed),
        }
    }
}

pub(crate) fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("backend failed after {attempts} attempt(s): {message}")]
    Exhausted { attempts: u32, message: String },
    #[error("backend timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("backend rejected the request: {0}")]
    Rejected(String),
    #[error("mock backend: {0}")]
    Mock(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// Anything that can answer a prompt.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<Completion, BackendError>;

    /// Cumulative usage over the backend's lifetime.
    fn usage(&self) -> TokenUsage;
}

/// The concrete backend selected by configuration.
#[derive(Debug)]
pub enum LlmBackend {
    Http(HttpBackend),
    Mock(MockBackend),
}

impl CompletionBackend for LlmBackend {
    fn complete(&self, prompt: &str) -> Result<Completion, BackendError> {
        if prompt.trim().is_empty() {
            return Err(BackendError::Config("empty prompt".into()));
        }
        match self {
            LlmBackend::Http(b) => b.complete(prompt),
            LlmBackend::Mock(b) => b.complete(prompt),
        }
    }

    fn usage(&self) -> TokenUsage {
        match self {
            LlmBackend::Http(b) => b.usage(),
            LlmBackend::Mock(b) => b.usage(),
        }
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, prompt: &str) -> Result<Completion, BackendError> {
        MockBackend::complete(self, prompt)
    }

    fn usage(&self) -> TokenUsage {
        MockBackend::usage(self)
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, prompt: &str) -> Result<Completion, BackendError> {
        HttpBackend::complete(self, prompt)
    }

    fn usage(&self) -> TokenUsage {
        HttpBackend::usage(self)
    }
}

/// Wraps a shared backend and tallies only the calls made through it, so
/// one planning run can report its own usage.
pub struct Metered<'a> {
    inner: &'a dyn CompletionBackend,
    counter: UsageCounter,
}

impl<'a> Metered<'a> {
    pub fn new(inner: &'a dyn CompletionBackend) -> Self {
        Metered {
            inner,
            counter: UsageCounter::default(),
        }
    }
}

impl CompletionBackend for Metered<'_> {
    fn complete(&self, prompt: &str) -> Result<Completion, BackendError> {
        let out = self.inner.complete(prompt)?;
        self.counter.record(out.usage);
        Ok(out)
    }

    fn usage(&self) -> TokenUsage {
        self.counter.snapshot()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

/// Backend section of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: f64,
    pub api_key_env: String,
    pub retries: u32,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    /// Rule table for the mock backend.
    pub mock_rules: Option<PathBuf>,
    pub mock_latency_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: None,
            model: None,
            temperature: DEFAULT_TEMPERATURE,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            retries: DEFAULT_RETRY_LIMIT,
            timeout_ms: 60_000,
            max_in_flight: 8,
            mock_rules: None,
            mock_latency_ms: 0,
        }
    }
}

impl BackendConfig {
    pub fn build(&self) -> Result<LlmBackend, BackendError> {
        match self.kind {
            BackendKind::Mock => {
                let rules = match &self.mock_rules {
                    Some(path) => MockRules::load(path)?,
                    None => MockRules::default(),
                };
                Ok(LlmBackend::Mock(
                    MockBackend::new(rules)
                        .with_latency(Duration::from_millis(self.mock_latency_ms)),
                ))
            }
            BackendKind::Http => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| BackendError::Config("backend.endpoint is required".into()))?;
                let model = self
                    .model
                    .clone()
                    .ok_or_else(|| BackendError::Config("backend.model is required".into()))?;
                let settings = HttpSettings {
                    endpoint,
                    model,
                    api_key: std::env::var(&self.api_key_env).ok(),
                    temperature: self.temperature,
                    timeout: Duration::from_millis(self.timeout_ms),
                    retry_limit: self.retries,
                    max_in_flight: self.max_in_flight,
                    ..HttpSettings::default()
                };
                Ok(LlmBackend::Http(HttpBackend::new(settings)?))
            }
        }
    }
}

/// Extracts the first JSON object embedded in model output, tolerating
/// surrounding prose or code fences.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}
