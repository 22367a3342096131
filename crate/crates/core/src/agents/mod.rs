//! Prompted zero-shot agents: prompt rendering, the chat-completions
//! client, strict output parsing, confidence extraction and the
//! retry/fallback protocol.

mod client;
mod confidence;
mod parse;
mod prompt;
mod runner;

pub use client::{
    decode_completion, ChatBackend, ChatMessage, ChatRequest, HttpChatClient, RawGeneration,
    TransportError, API_KEY_ENV,
};
pub use confidence::{clip_confidence, confidence_from_logprobs, label_tokens, LogprobError};
pub use parse::{parse_output, ParsedOutput, SchemaViolation, ViolationKind};
pub use prompt::{prompt_hash, prompt_template, render_prompt, template_hash, DISCLOSURE_PLACEHOLDER};
pub use runner::{
    build_request, run_agent, run_jobs, AgentSpec, DecodingConfig, EndpointJudge, Judge,
    ProtocolOptions, RetryPolicy,
};
