//! Sampling backends and the prompt/response plumbing shared by every agent.
//!
//! A [`Backend`] turns a [`SamplingRequest`] into exactly `n` completions.
//! Three implementations ship: an OpenAI-compatible HTTP client, a scripted
//! backend that replays fixtures or a rule, and a seeded mock whose output
//! is a pure function of the seed and the request.

mod http;
mod mock;
mod parse;
mod scripted;
mod template;

use std::collections::HashSet;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig, API_KEY_ENV};
pub use mock::MockBackend;
pub use parse::{parse_id_list, parse_yes_no, Verdict, YesNoLexicon};
pub use scripted::ScriptedBackend;
pub use template::{Template, TemplateError, TemplateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptMessage {
    pub role: Role,
    pub content: String,
}

impl PromptMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

/// Shape of the answer the caller will parse. Never sent over the wire;
/// offline backends use it to produce parseable replies.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "options")]
pub enum ResponseHint {
    #[default]
    FreeText,
    /// A nonempty subset of the listed ids.
    Subset(Vec<String>),
    /// Exactly one of the listed ids.
    Choice(Vec<String>),
    YesNo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingRequest {
    pub messages: Vec<PromptMessage>,
    pub temperature: f64,
    pub n: usize,
    pub max_tokens: Option<u32>,
    pub hint: ResponseHint,
    /// Position of the first requested sample in the stream of samples drawn
    /// for this prompt. Lets repeated batches of one prompt continue the
    /// stream instead of replaying it.
    pub sample_offset: usize,
}

impl SamplingRequest {
    pub fn new(messages: Vec<PromptMessage>, temperature: f64, n: usize) -> Self {
        Self {
            messages,
            temperature,
            n,
            max_tokens: None,
            hint: ResponseHint::FreeText,
            sample_offset: 0,
        }
    }

    pub fn with_hint(mut self, hint: ResponseHint) -> Self {
        self.hint = hint;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: Option<u32>) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_offset(mut self, offset: usize) -> Self {
        self.sample_offset = offset;
        self
    }

    pub fn last_user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingResponse {
    pub texts: Vec<String>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

impl From<&SamplingResponse> for TokenUsage {
    fn from(r: &SamplingResponse) -> Self {
        Self {
            prompt_tokens: r.prompt_tokens,
            completion_tokens: r.completion_tokens,
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("request rejected: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("server returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("backend returned {got} completions, expected {expected}")]
    CountMismatch { expected: usize, got: usize },
    #[error("scripted replies exhausted after {served} completions")]
    FixtureExhausted { served: usize },
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    /// Produce completions for `request`. Callers go through [`sample`],
    /// which checks the request and the completion count.
    fn complete(&self, request: &SamplingRequest) -> Result<SamplingResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &SamplingRequest) -> Result<SamplingResponse, BackendError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &SamplingRequest) -> Result<SamplingResponse, BackendError> {
        (**self).complete(request)
    }
}

pub fn sample(
    backend: &dyn Backend,
    request: &SamplingRequest,
) -> Result<SamplingResponse, BackendError> {
    if request.n == 0 {
        return Err(BackendError::InvalidRequest("n must be at least 1".into()));
    }
    if request.messages.is_empty() || request.messages.iter().any(|m| m.content.is_empty()) {
        return Err(BackendError::InvalidRequest(
            "messages must be present and nonempty".into(),
        ));
    }
    if request.temperature.is_nan() || request.temperature < 0.0 {
        return Err(BackendError::InvalidRequest(format!(
            "temperature {} is negative",
            request.temperature
        )));
    }
    let response = backend.complete(request)?;
    if response.texts.len() != request.n {
        return Err(BackendError::CountMismatch {
            expected: request.n,
            got: response.texts.len(),
        });
    }
    Ok(response)
}

/// Whitespace token count used where the backend reports no usage.
pub fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

pub(crate) fn approx_usage(request: &SamplingRequest, texts: &[String]) -> (u64, u64) {
    let prompt = request
        .messages
        .iter()
        .map(|m| approx_tokens(&m.content))
        .sum();
    let completion = texts.iter().map(|t| approx_tokens(t)).sum();
    (prompt, completion)
}

/// Key under which two answers count as the same: lowercase, whitespace collapsed.
pub fn normalize_answer(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistinctSamples {
    /// Distinct nonempty answers in the order they were drawn.
    pub texts: Vec<String>,
    /// Every completion received, duplicates and empties included.
    pub raw: Vec<String>,
    pub usage: TokenUsage,
    pub calls: usize,
}

/// Draw up to `want` answers that are pairwise distinct after
/// [`normalize_answer`], spending at most `max_batches` requests. Returns
/// fewer than `want` when the backend keeps repeating itself.
pub fn sample_distinct(
    backend: &dyn Backend,
    base: &SamplingRequest,
    want: usize,
    max_batches: usize,
) -> Result<DistinctSamples, BackendError> {
    let mut seen = HashSet::new();
    let mut out = DistinctSamples {
        texts: Vec::new(),
        raw: Vec::new(),
        usage: TokenUsage::default(),
        calls: 0,
    };
    let mut drawn = 0;
    for _ in 0..max_batches {
        if out.texts.len() >= want {
            break;
        }
        let mut request = base.clone();
        request.n = want - out.texts.len();
        request.sample_offset = base.sample_offset + drawn;
        let response = sample(backend, &request)?;
        out.calls += 1;
        out.usage += TokenUsage::from(&response);
        drawn += response.texts.len();
        for text in response.texts {
            let key = normalize_answer(&text);
            if !key.is_empty() && seen.insert(key) {
                out.texts.push(text.trim().to_string());
            }
            out.raw.push(text);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(n: usize) -> SamplingRequest {
        SamplingRequest::new(vec![PromptMessage::user("pick one")], 0.8, n)
    }

    #[test]
    fn distinct_sampling_dedups_normalized_text() {
        let backend = ScriptedBackend::from_replies([
            "Alpha  beta",
            "alpha beta",
            "",
            "Gamma",
            "gamma",
            "Delta",
        ]);
        let got = sample_distinct(&backend, &req(3), 3, 3).unwrap();
        // batch sizes shrink 3, 2, 1 as distinct answers accumulate
        assert_eq!(got.texts, vec!["Alpha  beta", "Gamma", "Delta"]);
        assert_eq!(got.calls, 3);
        assert_eq!(got.raw.len(), 6);
    }

    #[test]
    fn distinct_sampling_returns_fewer_when_answers_repeat() {
        let backend = ScriptedBackend::from_replies(["same"; 7]);
        let got = sample_distinct(&backend, &req(3), 3, 3).unwrap();
        assert_eq!(got.texts, vec!["same"]);
        assert_eq!(got.calls, 3);
    }

    #[test]
    fn distinct_sampling_stops_once_satisfied() {
        let backend = ScriptedBackend::from_replies(["a", "b", "c", "d"]);
        let got = sample_distinct(&backend, &req(2), 2, 3).unwrap();
        assert_eq!(got.texts, vec!["a", "b"]);
        assert_eq!(got.calls, 1);
    }

    #[test]
    fn sample_rejects_zero_n() {
        let backend = MockBackend::new(1);
        assert!(matches!(
            sample(&backend, &req(0)),
            Err(BackendError::InvalidRequest(_))
        ));
    }

    #[test]
    fn token_usage_adds() {
        let mut u = TokenUsage::default();
        u += TokenUsage {
            prompt_tokens: 3,
            completion_tokens: 4,
        };
        u += TokenUsage {
            prompt_tokens: 1,
            completion_tokens: 1,
        };
        assert_eq!(u.total(), 9);
    }
}
