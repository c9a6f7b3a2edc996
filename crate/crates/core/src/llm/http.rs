//! Blocking OpenAI-compatible chat-completion client.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    whitespace_tokens, BackendError, Completion, TokenUsage, UsageCounter, DEFAULT_RETRY_LIMIT,
    DEFAULT_TEMPERATURE,
};

#[derive(Debug, Clone)]
pub struct HttpSettings {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub temperature: f64,
    pub timeout: Duration,
    pub retry_limit: u32,
    /// First backoff delay; attempt k waits `backoff_base * 2^k`.
    pub backoff_base: Duration,
    pub max_in_flight: usize,
}

impl Default for HttpSettings {
    fn default() -> Self {
        HttpSettings {
            endpoint: String::new(),
            model: String::new(),
            api_key: None,
            temperature: DEFAULT_TEMPERATURE,
            timeout: Duration::from_secs(60),
            retry_limit: DEFAULT_RETRY_LIMIT,
            backoff_base: Duration::from_millis(250),
            max_in_flight: 8,
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(max: usize) -> Self {
        InFlight {
            slots: Mutex::new(max.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut free = self.slots.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.freed.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

enum Attempt {
    Done(Completion),
    Transient(String),
    Timeout,
    Fatal(BackendError),
}

#[derive(Debug)]
pub struct HttpBackend {
    settings: HttpSettings,
    agent: ureq::Agent,
    in_flight: InFlight,
    counter: UsageCounter,
}

impl HttpBackend {
    pub fn new(settings: HttpSettings) -> Result<Self, BackendError> {
        if !(0.0..=2.0).contains(&settings.temperature) {
            return Err(BackendError::Config(format!(
                "temperature {} outside [0, 2]",
                settings.temperature
            )));
        }
        if settings.endpoint.is_empty() {
            return Err(BackendError::Config("empty endpoint".into()));
        }
        let agent = ureq::AgentBuilder::new().timeout(settings.timeout).build();
        let in_flight = InFlight::new(settings.max_in_flight);
        Ok(HttpBackend {
            settings,
            agent,
            in_flight,
            counter: UsageCounter::default(),
        })
    }

    pub fn settings(&self) -> &HttpSettings {
        &self.settings
    }

    fn attempt(&self, prompt: &str) -> Attempt {
        let body = ChatRequest {
            model: &self.settings.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.settings.temperature,
        };
        let mut request = self.agent.post(&self.settings.endpoint);
        if let Some(key) = &self.settings.api_key {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        match request.send_json(&body) {
            Ok(response) => match response.into_json::<ChatResponse>() {
                Ok(parsed) => {
                    let text = parsed
                        .choices
                        .into_iter()
                        .next()
                        .and_then(|c| c.message.content)
                        .unwrap_or_default();
                    let usage = match parsed.usage {
                        Some(u) => TokenUsage {
                            input_tokens: u.prompt_tokens,
                            output_tokens: u.completion_tokens,
                            call_count: 0,
                        },
                        None => TokenUsage {
                            input_tokens: whitespace_tokens(prompt),
                            output_tokens: whitespace_tokens(&text),
                            call_count: 0,
                        },
                    };
                    Attempt::Done(Completion { text, usage })
                }
                Err(e) if is_timeout(&e) => Attempt::Timeout,
                Err(e) => Attempt::Transient(format!("unreadable response body: {e}")),
            },
            Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                Attempt::Transient(format!("HTTP {code}"))
            }
            Err(ureq::Error::Status(code, response)) => {
                let detail = response.into_string().unwrap_or_default();
                Attempt::Fatal(BackendError::Rejected(format!("HTTP {code}: {detail}")))
            }
            Err(ureq::Error::Transport(t)) => {
                let timed_out = std::error::Error::source(&t)
                    .and_then(|s| s.downcast_ref::<std::io::Error>())
                    .is_some_and(is_timeout);
                if timed_out {
                    Attempt::Timeout
                } else {
                    Attempt::Transient(t.to_string())
                }
            }
        }
    }

    /// Sends the prompt, retrying transient failures up to `retry_limit`
    /// times with a jitterless exponential backoff.
    pub fn complete(&self, prompt: &str) -> Result<Completion, BackendError> {
        let _slot = self.in_flight.acquire();
        let limit = self.settings.retry_limit;
        let mut last = Attempt::Transient(String::new());
        for attempt in 0..=limit {
            self.counter.record(TokenUsage {
                call_count: 1,
                ..TokenUsage::default()
            });
            match self.attempt(prompt) {
                Attempt::Done(mut completion) => {
                    self.counter.record(completion.usage);
                    completion.usage.call_count = 1;
                    return Ok(completion);
                }
                Attempt::Fatal(e) => return Err(e),
                retryable => last = retryable,
            }
            if attempt < limit {
                std::thread::sleep(self.settings.backoff_base * 2u32.pow(attempt));
            }
        }
        let attempts = limit + 1;
        Err(match last {
            Attempt::Timeout => BackendError::Timeout { attempts },
            Attempt::Transient(message) => BackendError::Exhausted { attempts, message },
            Attempt::Done(_) | Attempt::Fatal(_) => unreachable!("returned above"),
        })
    }

    pub fn usage(&self) -> TokenUsage {
        self.counter.snapshot()
    }
}

fn is_timeout(e: &std::io::Error) -> bool {
    matches!(
        e.kind(),
        std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
    )
}
