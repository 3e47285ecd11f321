//! Chat-completion providers: an HTTP client and an offline fixture-driven mock.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::http::{HttpSettings, JsonClient};
use crate::jsonl;

/// What a prompt is for; the mock provider keys its fixtures on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Train,
    Test,
    Inferior,
    Fusion,
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Purpose::Train => "train",
            Purpose::Test => "test",
            Purpose::Inferior => "inferior",
            Purpose::Fusion => "fusion",
        })
    }
}

#[derive(Debug, Clone)]
pub struct CompletionRequest<'a> {
    pub query_id: &'a str,
    pub purpose: Purpose,
    pub prompt: &'a str,
    /// Zero-based retry counter.
    pub attempt: u32,
}

pub trait LlmProvider: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String>;
    fn describe(&self) -> String;
}

/// OpenAI-style chat completion endpoint.
pub struct HttpLlmProvider {
    client: JsonClient,
    model: String,
    temperature: f64,
}

impl HttpLlmProvider {
    pub fn new(settings: HttpSettings, model: impl Into<String>, temperature: f64) -> Result<Self> {
        Ok(Self {
            client: JsonClient::new(settings)?,
            model: model.into(),
            temperature,
        })
    }

    pub fn request_body(&self, prompt: &str) -> serde_json::Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        })
    }
}

impl LlmProvider for HttpLlmProvider {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String> {
        let resp = self.client.post(&self.request_body(request.prompt))?;
        let choice = resp
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| Error::Provider("response has no choices".into()))?;
        choice
            .get("message")
            .and_then(|m| m.get("content"))
            .or_else(|| choice.get("text"))
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Provider("choice has no text content".into()))
    }

    fn describe(&self) -> String {
        format!("http:{}:{}:t={}", self.client.endpoint(), self.model, self.temperature)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockResponse {
    Text(String),
    /// Simulated transport failure.
    Failure { error: String },
}

/// One fixture line: `{"query_id", "purpose", "responses": [str | {"error": str}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockFixture {
    pub query_id: String,
    pub purpose: Purpose,
    pub responses: Vec<MockResponse>,
}

/// Replays canned responses: attempt `i` gets `responses[min(i, len-1)]`.
#[derive(Debug, Clone, Default)]
pub struct MockLlmProvider {
    fixtures: HashMap<(String, Purpose), Vec<MockResponse>>,
}

impl MockLlmProvider {
    pub fn new(fixtures: impl IntoIterator<Item = MockFixture>) -> Self {
        Self {
            fixtures: fixtures
                .into_iter()
                .map(|f| ((f.query_id, f.purpose), f.responses))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::new(jsonl::read::<MockFixture>(path)?))
    }

    pub fn insert(&mut self, query_id: impl Into<String>, purpose: Purpose, responses: Vec<MockResponse>) {
        self.fixtures.insert((query_id.into(), purpose), responses);
    }
}

impl LlmProvider for MockLlmProvider {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String> {
        let responses = self
            .fixtures
            .get(&(request.query_id.to_string(), request.purpose))
            .filter(|r| !r.is_empty())
            .ok_or_else(|| {
                Error::Provider(format!(
                    "no mock response for query {:?} ({})",
                    request.query_id, request.purpose
                ))
            })?;
        let idx = (request.attempt as usize).min(responses.len() - 1);
        match &responses[idx] {
            MockResponse::Text(t) => Ok(t.clone()),
            MockResponse::Failure { error } => Err(Error::Provider(error.clone())),
        }
    }

    fn describe(&self) -> String {
        format!("mock:{} fixtures", self.fixtures.len())
    }
}
