//! Rule-table mock backend.
//!
//! A response is a pure function of the rule table and the prompt: the first
//! rule whose pattern occurs in the prompt answers. Rules with several
//! responses pick one by hashing the prompt with the table seed.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{whitespace_tokens, BackendError, Completion, TokenUsage, UsageCounter};
use crate::util::fnv1a64;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockRule {
    /// Substring that must occur in the prompt.
    pub pattern: String,
    /// Single response. JSON values other than strings are sent compactly
    /// serialized, so rule files can embed documents directly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub responses: Vec<serde_json::Value>,
    /// Fail the call with this message instead of answering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MockRule {
    pub fn text(pattern: impl Into<String>, response: impl Into<String>) -> Self {
        MockRule {
            pattern: pattern.into(),
            response: Some(serde_json::Value::String(response.into())),
            ..MockRule::default()
        }
    }

    pub fn json(pattern: impl Into<String>, response: serde_json::Value) -> Self {
        MockRule {
            pattern: pattern.into(),
            response: Some(response),
            ..MockRule::default()
        }
    }

    pub fn failing(pattern: impl Into<String>, message: impl Into<String>) -> Self {
        MockRule {
            pattern: pattern.into(),
            error: Some(message.into()),
            ..MockRule::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockRules {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    /// Answer used when no rule matches; without one, unmatched prompts fail.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<serde_json::Value>,
}

impl MockRules {
    pub fn with_default(response: impl Into<String>) -> Self {
        MockRules {
            default: Some(serde_json::Value::String(response.into())),
            ..Self::default()
        }
    }

    pub fn push(&mut self, rule: MockRule) -> &mut Self {
        self.rules.push(rule);
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))
    }

    fn respond(&self, prompt: &str) -> Result<String, BackendError> {
        let Some(rule) = self.rules.iter().find(|r| prompt.contains(&r.pattern)) else {
            return match &self.default {
                Some(v) => Ok(render(v)),
                None => Err(BackendError::Mock("no rule matches the prompt".into())),
            };
        };
        if let Some(message) = &rule.error {
            return Err(BackendError::Mock(message.clone()));
        }
        if !rule.responses.is_empty() {
            let pick = (fnv1a64(prompt.as_bytes()) ^ self.seed) % rule.responses.len() as u64;
            return Ok(render(&rule.responses[pick as usize]));
        }
        match &rule.response {
            Some(v) => Ok(render(v)),
            None => Err(BackendError::Mock(format!(
                "rule {:?} has no response",
                rule.pattern
            ))),
        }
    }
}

fn render(value: &serde_json::Value) -> String {
    match value {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[derive(Debug)]
pub struct MockBackend {
    rules: MockRules,
    latency: Duration,
    counter: UsageCounter,
}

impl MockBackend {
    pub fn new(rules: MockRules) -> Self {
        MockBackend {
            rules,
            latency: Duration::ZERO,
            counter: UsageCounter::default(),
        }
    }

    /// Sleeps this long on every call, to model network round trips.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn rules(&self) -> &MockRules {
        &self.rules
    }

    pub fn complete(&self, prompt: &str) -> Result<Completion, BackendError> {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let answer = self.rules.respond(prompt);
        let usage = TokenUsage {
            input_tokens: whitespace_tokens(prompt),
            output_tokens: answer.as_deref().map(whitespace_tokens).unwrap_or(0),
            call_count: 1,
        };
        self.counter.record(usage);
        answer.map(|text| Completion { text, usage })
    }

    pub fn usage(&self) -> TokenUsage {
        self.counter.snapshot()
    }
}
