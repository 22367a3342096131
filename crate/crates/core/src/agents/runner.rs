//! The per-(disclosure, agent) judgment protocol and a bounded concurrent
//! batch driver.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::domain::{AgentOutput, ConfidenceSource, DisclosureRecord, Lens, SentimentLabel};
use crate::error::{Error, Result};

use super::client::{ChatBackend, ChatMessage, ChatRequest, RawGeneration};
use super::confidence::{confidence_from_logprobs, label_tokens};
use super::parse::{parse_output, SchemaViolation};
use super::prompt::{prompt_hash, render_prompt};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub lens: Lens,
    pub model_name: String,
    pub endpoint_url: String,
    #[serde(default)]
    pub supports_logprobs: bool,
}

impl AgentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.endpoint_url.trim().is_empty() {
            return Err(Error::Config(format!("agent {} has an empty endpoint_url", self.lens)));
        }
        if self.model_name.trim().is_empty() {
            return Err(Error::Config(format!("agent {} has an empty model_name", self.lens)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "one")]
    pub top_p: f64,
    pub seed: u64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
}

fn one() -> f64 {
    1.0
}

fn default_max_output_tokens() -> u32 {
    256
}

impl DecodingConfig {
    pub fn deterministic(seed: u64) -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            seed,
            max_output_tokens: default_max_output_tokens(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature != 0.0 || self.top_p != 1.0 {
            return Err(Error::Config(format!(
                "decoding must be greedy (temperature 0, top_p 1), got temperature {} top_p {}",
                self.temperature, self.top_p
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(Error::Config("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Bounded exponential backoff for transport failures. Schema violations
/// are handled separately by the single-retry rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 250,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOptions {
    /// Treat keys beyond label/rationale/confidence as a schema violation.
    pub strict_keys: bool,
    pub retry: RetryPolicy,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            strict_keys: true,
            retry: RetryPolicy::default(),
        }
    }
}

pub fn build_request(spec: &AgentSpec, cfg: &DecodingConfig, prompt: &str) -> ChatRequest {
    ChatRequest {
        model: spec.model_name.clone(),
        messages: vec![ChatMessage {
            role: "user".into(),
            content: prompt.to_string(),
        }],
        temperature: cfg.temperature,
        top_p: cfg.top_p,
        seed: cfg.seed,
        max_tokens: cfg.max_output_tokens,
        logprobs: spec.supports_logprobs.then_some(true),
    }
}

fn generate_with_backoff(
    backend: &dyn ChatBackend,
    spec: &AgentSpec,
    request: &ChatRequest,
    policy: &RetryPolicy,
) -> Result<RawGeneration> {
    let attempts = policy.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 0..attempts {
        match backend.complete(&spec.endpoint_url, request) {
            Ok(raw) => return Ok(raw),
            Err(e) if e.retryable && attempt + 1 < attempts => {
                let delay = policy.delay(attempt);
                warn!(lens = %spec.lens, attempt, ?delay, "transport error, backing off: {e}");
                std::thread::sleep(delay);
                last = e.message;
            }
            Err(e) => {
                return Err(Error::Transport {
                    attempts: attempt + 1,
                    message: e.message,
                })
            }
        }
    }
    Err(Error::Transport {
        attempts,
        message: last,
    })
}

fn output_from_generation(
    raw: &RawGeneration,
    spec: &AgentSpec,
    strict_keys: bool,
) -> std::result::Result<AgentOutputParts, SchemaViolation> {
    let parsed = parse_output(&raw.text, strict_keys)?;
    let tokens = match (&raw.token_logprobs, spec.supports_logprobs) {
        (Some(stream), true) => label_tokens(stream, &raw.text, parsed.label_span.clone()),
        _ => None,
    };
    let logprob_confidence = tokens.as_ref().and_then(|toks| {
        let lps: Vec<f64> = toks.iter().map(|t| t.logprob).collect();
        match confidence_from_logprobs(&lps) {
            Ok(c) => Some(c),
            Err(e) => {
                warn!(lens = %spec.lens, "no usable label logprobs ({e}), using self-reported confidence");
                None
            }
        }
    });
    let (confidence, source) = match logprob_confidence {
        Some(c) => (c, ConfidenceSource::TokenLogprob),
        None => (parsed.self_confidence, ConfidenceSource::SelfReported),
    };
    Ok(AgentOutputParts {
        label: parsed.label,
        rationale: parsed.rationale,
        confidence,
        source,
        self_reported: parsed.self_confidence,
        label_tokens: tokens.unwrap_or_default(),
        json: parsed.json,
    })
}

struct AgentOutputParts {
    label: SentimentLabel,
    rationale: String,
    confidence: f64,
    source: ConfidenceSource,
    self_reported: f64,
    label_tokens: Vec<crate::domain::TokenLogprob>,
    json: String,
}

/// Runs one agent on one disclosure.
///
/// A schema-violating generation is re-run exactly once with the same
/// request. If that also fails the output is the neutral, zero-confidence
/// fallback, which stays in the dataset. Transport failures are retried
/// with backoff and surface as an error once exhausted.
pub fn run_agent(
    backend: &dyn ChatBackend,
    spec: &AgentSpec,
    cfg: &DecodingConfig,
    record: &DisclosureRecord,
    options: &ProtocolOptions,
) -> Result<AgentOutput> {
    let prompt = render_prompt(spec.lens, &record.clean_text);
    let hash = prompt_hash(&prompt);
    let request = build_request(spec, cfg, &prompt);

    let mut last_text = String::new();
    for retry_count in 0..=1u8 {
        let raw = generate_with_backoff(backend, spec, &request, &options.retry)?;
        match output_from_generation(&raw, spec, options.strict_keys) {
            Ok(parts) => {
                return Ok(AgentOutput {
                    disclosure_id: record.id.clone(),
                    agent: spec.lens,
                    label: parts.label,
                    confidence: parts.confidence,
                    rationale: parts.rationale,
                    confidence_source: parts.source,
                    self_reported_confidence: Some(parts.self_reported),
                    label_token_logprobs: parts.label_tokens,
                    model_name: spec.model_name.clone(),
                    prompt_hash: hash,
                    seed: cfg.seed,
                    raw_json: parts.json,
                    retry_count,
                })
            }
            Err(violation) => {
                debug!(id = %record.id, lens = %spec.lens, retry_count, "schema violation: {violation}");
                last_text = raw.text;
            }
        }
    }
    warn!(id = %record.id, lens = %spec.lens, "two schema violations, using neutral fallback");
    Ok(AgentOutput {
        disclosure_id: record.id.clone(),
        agent: spec.lens,
        label: SentimentLabel::Neutral,
        confidence: 0.0,
        rationale: String::new(),
        confidence_source: ConfidenceSource::Fallback,
        self_reported_confidence: None,
        label_token_logprobs: Vec::new(),
        model_name: spec.model_name.clone(),
        prompt_hash: hash,
        seed: cfg.seed,
        raw_json: last_text,
        retry_count: 1,
    })
}

/// Anything that can produce an agent judgment for a disclosure.
pub trait Judge: Sync {
    fn judge(&self, spec: &AgentSpec, record: &DisclosureRecord) -> Result<AgentOutput>;
}

/// [`Judge`] backed by a chat-completions endpoint.
pub struct EndpointJudge<B> {
    pub backend: B,
    pub decoding: DecodingConfig,
    pub options: ProtocolOptions,
}

impl<B: ChatBackend> Judge for EndpointJudge<B> {
    fn judge(&self, spec: &AgentSpec, record: &DisclosureRecord) -> Result<AgentOutput> {
        run_agent(&self.backend, spec, &self.decoding, record, &self.options)
    }
}

/// Runs `jobs` with at most `max_in_flight` concurrent judgments. Every
/// finished output is handed to `sink` on the calling thread, so a single
/// writer can persist results. Stops scheduling new work at the first error
/// and returns it after in-flight jobs drain.
pub fn run_jobs<J, F>(
    judge: &J,
    jobs: &[(AgentSpec, &DisclosureRecord)],
    max_in_flight: usize,
    mut sink: F,
) -> Result<usize>
where
    J: Judge + ?Sized,
    F: FnMut(AgentOutput) -> Result<()>,
{
    let workers = max_in_flight.clamp(1, jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<Result<AgentOutput>>();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, stop) = (&next, &stop);
            scope.spawn(move || loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((spec, record)) = jobs.get(i) else {
                    break;
                };
                let result = judge.judge(spec, record);
                let failed = result.is_err();
                if tx.send(result).is_err() || failed {
                    stop.store(true, Ordering::Relaxed);
                    break;
                }
            });
        }
        drop(tx);

        let mut done = 0;
        let mut first_error = None;
        for result in rx {
            match result.and_then(|out| out.validate().map(|_| out)) {
                Ok(out) if first_error.is_none() => {
                    if let Err(e) = sink(out) {
                        stop.store(true, Ordering::Relaxed);
                        first_error = Some(e);
                    } else {
                        done += 1;
                    }
                }
                Ok(out) => {
                    // keep completed work even after a failure elsewhere
                    if sink(out).is_ok() {
                        done += 1;
                    }
                }
                Err(e) => {
                    stop.store(true, Ordering::Relaxed);
                    first_error.get_or_insert(e);
                }
            }
        }
        match first_error {
            Some(e) => Err(e),
            None => Ok(done),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::client::TransportError;
    use crate::domain::TokenLogprob;
    use chrono::Utc;
    use std::sync::Mutex;

    struct Scripted {
        replies: Mutex<Vec<Result<RawGeneration, TransportError>>>,
        calls: AtomicUsize,
        requests: Mutex<Vec<ChatRequest>>,
    }

    impl Scripted {
        fn new(mut replies: Vec<Result<RawGeneration, TransportError>>) -> Self {
            replies.reverse();
            Self {
                replies: Mutex::new(replies),
                calls: AtomicUsize::new(0),
                requests: Mutex::new(vec![]),
            }
        }
    }

    impl ChatBackend for Scripted {
        fn complete(&self, _: &str, request: &ChatRequest) -> Result<RawGeneration, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.requests.lock().unwrap().push(request.clone());
            self.replies.lock().unwrap().pop().expect("unexpected extra call")
        }
    }

    fn text(t: &str) -> Result<RawGeneration, TransportError> {
        Ok(RawGeneration {
            text: t.into(),
            token_logprobs: None,
            http_status: 200,
        })
    }

    fn tokenized(parts: &[(&str, f64)]) -> Result<RawGeneration, TransportError> {
        Ok(RawGeneration {
            text: parts.iter().map(|p| p.0).collect(),
            token_logprobs: Some(
                parts
                    .iter()
                    .map(|(t, lp)| TokenLogprob {
                        token: t.to_string(),
                        logprob: *lp,
                    })
                    .collect(),
            ),
            http_status: 200,
        })
    }

    fn spec(logprobs: bool) -> AgentSpec {
        AgentSpec {
            lens: Lens::Guidance,
            model_name: "qwen".into(),
            endpoint_url: "http://localhost/v1/chat/completions".into(),
            supports_logprobs: logprobs,
        }
    }

    fn record() -> DisclosureRecord {
        DisclosureRecord {
            id: "d1".into(),
            timestamp: Utc::now(),
            ticker: "ABC".into(),
            raw_text: "Guidance raised.".into(),
            clean_text: "Guidance raised.".into(),
            next_day_return: 0.01,
            binary_target: 1,
        }
    }

    fn quick() -> ProtocolOptions {
        ProtocolOptions {
            strict_keys: true,
            retry: RetryPolicy {
                max_attempts: 3,
                base_delay_ms: 1,
                max_delay_ms: 2,
            },
        }
    }

    const VALID: &str = r#"{"label":"positive","rationale":"Raised outlook.","confidence":0.7}"#;

    #[test]
    fn happy_path_with_logprobs() {
        let backend = Scripted::new(vec![tokenized(&[
            ("{\"label\": \"", -0.01),
            ("posit", 0.5f64.ln()),
            ("ive", 0.5f64.ln()),
            ("\", \"rationale\": \"Up.\", \"confidence\": 0.9}", -0.2),
        ])]);
        let out = run_agent(&backend, &spec(true), &DecodingConfig::deterministic(3), &record(), &quick())
            .unwrap();
        assert_eq!(out.retry_count, 0);
        assert_eq!(out.confidence_source, ConfidenceSource::TokenLogprob);
        assert!((out.confidence - 0.5).abs() < 1e-12);
        assert_eq!(out.self_reported_confidence, Some(0.9));
        assert_eq!(out.label_token_logprobs.len(), 2);
        let req = &backend.requests.lock().unwrap()[0];
        assert_eq!(req.logprobs, Some(true));
        assert_eq!(req.seed, 3);
    }

    #[test]
    fn self_reported_when_logprobs_unsupported() {
        let backend = Scripted::new(vec![text(VALID)]);
        let out = run_agent(&backend, &spec(false), &DecodingConfig::deterministic(1), &record(), &quick())
            .unwrap();
        assert_eq!(out.confidence_source, ConfidenceSource::SelfReported);
        assert_eq!(out.confidence, 0.7);
        assert_eq!(out.label, SentimentLabel::Positive);
        assert_eq!(backend.requests.lock().unwrap()[0].logprobs, None);
    }

    #[test]
    fn one_retry_then_success() {
        let backend = Scripted::new(vec![text("I think it is good."), text(VALID)]);
        let out = run_agent(&backend, &spec(false), &DecodingConfig::deterministic(1), &record(), &quick())
            .unwrap();
        assert_eq!(out.retry_count, 1);
        assert_eq!(out.label, SentimentLabel::Positive);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 2);
        let reqs = backend.requests.lock().unwrap();
        assert_eq!(reqs[0], reqs[1]);
    }

    #[test]
    fn double_violation_falls_back() {
        let backend = Scripted::new(vec![
            text(r#"{"label":"bullish","rationale":"r","confidence":1}"#),
            text("nope"),
        ]);
        let out = run_agent(&backend, &spec(true), &DecodingConfig::deterministic(1), &record(), &quick())
            .unwrap();
        assert_eq!(backend.calls.load(Ordering::SeqCst), 2);
        assert_eq!(out.label, SentimentLabel::Neutral);
        assert_eq!(out.confidence, 0.0);
        assert_eq!(out.confidence_source, ConfidenceSource::Fallback);
        assert_eq!(out.retry_count, 1);
        assert!(out.rationale.is_empty());
        out.validate().unwrap();
    }

    #[test]
    fn transport_errors_back_off_then_succeed() {
        let backend = Scripted::new(vec![
            Err(TransportError::retryable("reset")),
            Err(TransportError::retryable("reset")),
            text(VALID),
        ]);
        let out = run_agent(&backend, &spec(false), &DecodingConfig::deterministic(1), &record(), &quick())
            .unwrap();
        assert_eq!(out.retry_count, 0);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn transport_exhaustion_fails_loudly() {
        let backend = Scripted::new(vec![
            Err(TransportError::retryable("down")),
            Err(TransportError::retryable("down")),
            Err(TransportError::retryable("down")),
        ]);
        let err = run_agent(&backend, &spec(false), &DecodingConfig::deterministic(1), &record(), &quick())
            .unwrap_err();
        assert!(matches!(err, Error::Transport { attempts: 3, .. }), "{err}");
    }

    #[test]
    fn fatal_transport_error_is_not_retried() {
        let backend = Scripted::new(vec![Err(TransportError::fatal("401"))]);
        let err = run_agent(&backend, &spec(false), &DecodingConfig::deterministic(1), &record(), &quick())
            .unwrap_err();
        assert!(matches!(err, Error::Transport { attempts: 1, .. }));
    }

    #[test]
    fn backoff_is_bounded() {
        let p = RetryPolicy {
            max_attempts: 10,
            base_delay_ms: 100,
            max_delay_ms: 1000,
        };
        assert_eq!(p.delay(0), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(400));
        assert_eq!(p.delay(9), Duration::from_millis(1000));
        assert_eq!(p.delay(64), Duration::from_millis(1000));
    }

    #[test]
    fn decoding_must_be_greedy() {
        let mut cfg = DecodingConfig::deterministic(1);
        cfg.validate().unwrap();
        cfg.temperature = 0.7;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn batch_driver_collects_everything() {
        struct Echo;
        impl Judge for Echo {
            fn judge(&self, spec: &AgentSpec, record: &DisclosureRecord) -> Result<AgentOutput> {
                let backend = Scripted::new(vec![text(VALID)]);
                run_agent(&backend, spec, &DecodingConfig::deterministic(1), record, &quick())
            }
        }
        let records: Vec<_> = (0..20)
            .map(|i| DisclosureRecord {
                id: format!("d{i}"),
                ..record()
            })
            .collect();
        let jobs: Vec<_> = records
            .iter()
            .flat_map(|r| Lens::ALL.map(|lens| (AgentSpec { lens, ..spec(false) }, r)))
            .collect();
        let mut seen = Vec::new();
        let n = run_jobs(&Echo, &jobs, 4, |out| {
            seen.push((out.disclosure_id, out.agent));
            Ok(())
        })
        .unwrap();
        assert_eq!(n, 60);
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 60);
    }

    #[test]
    fn batch_driver_surfaces_errors() {
        struct Failing;
        impl Judge for Failing {
            fn judge(&self, _: &AgentSpec, _: &DisclosureRecord) -> Result<AgentOutput> {
                Err(Error::Transport {
                    attempts: 1,
                    message: "down".into(),
                })
            }
        }
        let r = record();
        let jobs = vec![(spec(false), &r)];
        assert!(run_jobs(&Failing, &jobs, 2, |_| Ok(())).is_err());
    }
}
