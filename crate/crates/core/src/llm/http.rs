use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{estimate_tokens, ChatTurn, CompletionRequest, CompletionResult, LanguageModel, LmError};

/// Connection settings for an OpenAI-compatible chat-completions endpoint.
/// The API key is read from the environment variable named by `api_key_env`
/// at call time and never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    /// Full URL, e.g. `https://host/v1/chat/completions`.
    pub endpoint: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u64,
    pub api_key_env: String,
    /// Seconds per HTTP request.
    pub request_timeout: f64,
    pub max_retries: u32,
    /// First backoff delay in seconds; doubles per retry.
    pub backoff_base: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model_id: String::new(),
            temperature: 0.5,
            max_tokens: 4096,
            api_key_env: "OPENAI_API_KEY".into(),
            request_timeout: 120.0,
            max_retries: 3,
            backoff_base: 1.0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    completion_tokens: Option<u64>,
}

enum Attempt {
    Done(CompletionResult),
    Retry(LmError),
    Fatal(LmError),
}

pub struct HttpBackend {
    config: LmConfig,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(config: LmConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.request_timeout)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    fn body(&self, conversation: &[ChatTurn]) -> serde_json::Value {
        json!({
            "model": self.config.model_id,
            "messages": conversation,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        })
    }

    fn attempt(&self, body: &serde_json::Value, key: Option<&str>) -> Attempt {
        let start = Instant::now();
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(k) = key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(LmError::Timeout(1)),
            Err(e) => return Attempt::Retry(LmError::Transport(e.to_string())),
        };
        let status = resp.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => {
                let msg = resp.body_mut().read_to_string().unwrap_or_default();
                return Attempt::Fatal(LmError::Auth(format!("HTTP {status}: {msg}")));
            }
            429 => return Attempt::Retry(LmError::RateLimited(1)),
            500..=599 => return Attempt::Retry(LmError::Transport(format!("HTTP {status}"))),
            _ => {
                let msg = resp.body_mut().read_to_string().unwrap_or_default();
                return Attempt::Fatal(LmError::MalformedResponse(format!("HTTP {status}: {msg}")));
            }
        }
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(LmError::Timeout(1)),
            Err(e) => return Attempt::Retry(LmError::Transport(e.to_string())),
        };
        let latency = start.elapsed().as_secs_f64();
        match parse_chat_response(&text) {
            Ok((content, tokens)) => {
                let (output_tokens, tokens_estimated) = match tokens {
                    Some(n) => (n, false),
                    None => (estimate_tokens(&content), true),
                };
                Attempt::Done(CompletionResult {
                    text: content,
                    output_tokens,
                    latency,
                    tokens_estimated,
                })
            }
            Err(e) => Attempt::Fatal(e),
        }
    }
}

/// Extracts message content and completion-token usage from a response body.
fn parse_chat_response(body: &str) -> Result<(String, Option<u64>), LmError> {
    let parsed: ChatResponse =
        serde_json::from_str(body).map_err(|e| LmError::MalformedResponse(e.to_string()))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| LmError::MalformedResponse("no choices".into()))?;
    let content = choice.message.content.unwrap_or_default();
    Ok((content, parsed.usage.and_then(|u| u.completion_tokens)))
}

impl LanguageModel for HttpBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<CompletionResult, LmError> {
        let key = std::env::var(&self.config.api_key_env).ok();
        let body = self.body(request.conversation);
        let attempts = self.config.max_retries + 1;
        let mut last = LmError::Transport("no attempt made".into());
        for i in 0..attempts {
            if i > 0 {
                let delay = self.config.backoff_base * 2f64.powi(i as i32 - 1);
                std::thread::sleep(Duration::from_secs_f64(delay));
            }
            match self.attempt(&body, key.as_deref()) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => {
                    tracing::warn!(attempt = i + 1, error = %e, "chat completion failed");
                    last = e;
                }
            }
        }
        Err(match last {
            LmError::RateLimited(_) => LmError::RateLimited(attempts),
            LmError::Timeout(_) => LmError::Timeout(attempts),
            other => other,
        })
    }
}
