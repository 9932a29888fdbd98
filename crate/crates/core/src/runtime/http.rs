//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, PromptMessage, SamplingRequest, SamplingResponse};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "DRUGMCTS_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    /// Total attempts per request, including the first.
    pub max_attempts: usize,
    pub initial_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "Qwen2.5-7B-Instruct".into(),
            max_attempts: 3,
            initial_backoff_ms: 500,
            timeout_secs: 120,
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [PromptMessage],
    temperature: f64,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    index: Option<usize>,
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

enum Attempt {
    Retry(BackendError),
    Fail(BackendError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            api_key,
            agent,
        }
    }

    /// Reads the bearer token from [`API_KEY_ENV`] when set.
    pub fn from_env(config: HttpConfig) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(config, key)
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }

    fn attempt(
        &self,
        body: &ChatRequest<'_>,
        n: usize,
        attempt: usize,
    ) -> Result<SamplingResponse, Attempt> {
        let mut call = self.agent.post(&self.endpoint());
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send_json(body).map_err(|e| {
            Attempt::Retry(BackendError::Transport {
                attempts: attempt,
                message: e.to_string(),
            })
        })?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(|e| {
            Attempt::Retry(BackendError::Transport {
                attempts: attempt,
                message: e.to_string(),
            })
        })?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(BackendError::Status { status, body: text }));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fail(BackendError::Status { status, body: text }));
        }
        parse_chat_response(&text, n).map_err(Attempt::Fail)
    }
}

fn parse_chat_response(text: &str, n: usize) -> Result<SamplingResponse, BackendError> {
    let parsed: ChatResponse =
        serde_json::from_str(text).map_err(|e| BackendError::Malformed(e.to_string()))?;
    if parsed.choices.len() != n {
        return Err(BackendError::CountMismatch {
            expected: n,
            got: parsed.choices.len(),
        });
    }
    let mut choices: Vec<(usize, String)> = parsed
        .choices
        .into_iter()
        .enumerate()
        .map(|(pos, c)| {
            (
                c.index.unwrap_or(pos),
                c.message.content.unwrap_or_default(),
            )
        })
        .collect();
    choices.sort_by_key(|(i, _)| *i);
    let usage = parsed.usage.unwrap_or(Usage {
        prompt_tokens: 0,
        completion_tokens: 0,
    });
    Ok(SamplingResponse {
        texts: choices.into_iter().map(|(_, t)| t).collect(),
        prompt_tokens: usage.prompt_tokens,
        completion_tokens: usage.completion_tokens,
    })
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, request: &SamplingRequest) -> Result<SamplingResponse, BackendError> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: &request.messages,
            temperature: request.temperature,
            n: request.n,
            max_tokens: request.max_tokens,
        };
        let attempts = self.config.max_attempts.max(1);
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let mut last = None;
        for attempt in 1..=attempts {
            match self.attempt(&body, request.n, attempt) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    log::warn!("chat completion attempt {attempt}/{attempts} failed: {e}");
                    last = Some(e);
                    if attempt < attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(match last {
            Some(BackendError::Transport { message, .. }) => {
                BackendError::Transport { attempts, message }
            }
            Some(e) => e,
            None => unreachable!("at least one attempt is made"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn choices_are_ordered_by_index() {
        let body = r#"{"choices":[
            {"index":1,"message":{"role":"assistant","content":"b"}},
            {"index":0,"message":{"role":"assistant","content":"a"}}],
            "usage":{"prompt_tokens":12,"completion_tokens":3,"total_tokens":15}}"#;
        let r = parse_chat_response(body, 2).unwrap();
        assert_eq!(r.texts, ["a", "b"]);
        assert_eq!((r.prompt_tokens, r.completion_tokens), (12, 3));
    }

    #[test]
    fn wrong_choice_count_and_garbage_are_errors() {
        let body = r#"{"choices":[{"message":{"content":"a"}}]}"#;
        assert!(matches!(
            parse_chat_response(body, 2),
            Err(BackendError::CountMismatch {
                expected: 2,
                got: 1
            })
        ));
        assert!(matches!(
            parse_chat_response("<html>", 1),
            Err(BackendError::Malformed(_))
        ));
    }
}
