//! OpenAI-compatible chat-completions transport.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::domain::TokenLogprob;

pub const API_KEY_ENV: &str = "ENSEMBLE_JUDGE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub logprobs: Option<bool>,
}

/// What came back from one generation call.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGeneration {
    pub text: String,
    /// Full generated token stream with log probabilities, when returned.
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub http_status: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct TransportError {
    pub retryable: bool,
    pub message: String,
}

impl TransportError {
    pub fn retryable(message: impl Into<String>) -> Self {
        Self {
            retryable: true,
            message: message.into(),
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self {
            retryable: false,
            message: message.into(),
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, endpoint_url: &str, request: &ChatRequest)
        -> Result<RawGeneration, TransportError>;
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

/// Decodes a chat-completions response body.
pub fn decode_completion(body: &str, http_status: u16) -> Result<RawGeneration, TransportError> {
    let parsed: CompletionResponse = serde_json::from_str(body)
        .map_err(|e| TransportError::fatal(format!("unreadable completion body: {e}")))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| TransportError::fatal("completion has no choices"))?;
    Ok(RawGeneration {
        text: choice.message.content.unwrap_or_default(),
        token_logprobs: choice.logprobs.and_then(|l| l.content),
        http_status,
    })
}

pub struct HttpChatClient {
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpChatClient {
    pub fn new(api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent, api_key }
    }

    /// Reads the bearer token from `ENSEMBLE_JUDGE_API_KEY`, if set.
    pub fn from_env(timeout: Duration) -> Self {
        Self::new(std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()), timeout)
    }
}

impl ChatBackend for HttpChatClient {
    fn complete(
        &self,
        endpoint_url: &str,
        request: &ChatRequest,
    ) -> Result<RawGeneration, TransportError> {
        let body = serde_json::to_string(request)
            .map_err(|e| TransportError::fatal(format!("cannot encode request: {e}")))?;
        let mut call = self.agent.post(endpoint_url).content_type("application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = call
            .send(body)
            .map_err(|e| TransportError::retryable(format!("{endpoint_url}: {e}")))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::retryable(format!("{endpoint_url}: reading body: {e}")))?;
        match status {
            200..=299 => decode_completion(&text, status),
            408 | 429 | 500..=599 => Err(TransportError::retryable(format!(
                "{endpoint_url}: HTTP {status}"
            ))),
            _ => Err(TransportError::fatal(format!(
                "{endpoint_url}: HTTP {status}: {}",
                text.chars().take(200).collect::<String>()
            ))),
        }
    }
}
