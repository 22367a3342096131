mod support;

use std::time::Duration;

use chrono::TimeZone;
use ensemble_judge::agents::{run_agent, AgentSpec, DecodingConfig, HttpChatClient, ProtocolOptions, RetryPolicy};
use ensemble_judge::{ConfidenceSource, DisclosureRecord, Error, Lens, SentimentLabel};
use support::{MockServer, Reply};

const GOOD: &str = r#"{"label": "positive", "rationale": "Revenue beat.", "confidence": 0.7}"#;

fn record() -> DisclosureRecord {
    DisclosureRecord {
        id: "d1".into(),
        timestamp: chrono::Utc.with_ymd_and_hms(2020, 3, 2, 0, 0, 0).unwrap(),
        ticker: "acme".into(),
        raw_text: "Revenue rose 5%.".into(),
        clean_text: "Revenue rose 5%.".into(),
        next_day_return: 0.01,
        binary_target: 1,
    }
}

fn spec(url: &str, logprobs: bool) -> AgentSpec {
    AgentSpec {
        lens: Lens::Performance,
        model_name: "mock-3b".into(),
        endpoint_url: url.into(),
        supports_logprobs: logprobs,
    }
}

fn options() -> ProtocolOptions {
    ProtocolOptions {
        strict_keys: true,
        retry: RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 1,
            max_delay_ms: 4,
        },
    }
}

fn client() -> HttpChatClient {
    HttpChatClient::new(Some("secret".into()), Duration::from_secs(10))
}

fn good() -> Reply {
    Reply::Content {
        text: GOOD.into(),
        logprob: -0.1,
    }
}

#[test]
fn logprob_confidence_and_request_shape() {
    let server = MockServer::start(|_, _| good());
    let out = run_agent(&client(), &spec(&server.url, true), &DecodingConfig::deterministic(9), &record(), &options()).unwrap();
    assert_eq!(out.label, SentimentLabel::Positive);
    assert_eq!(out.confidence_source, ConfidenceSource::TokenLogprob);
    assert!((out.confidence - (-0.1f64).exp()).abs() < 1e-12);
    assert_eq!(out.self_reported_confidence, Some(0.7));
    assert_eq!(out.retry_count, 0);

    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].authorization.as_deref(), Some("Bearer secret"));
    let body = &reqs[0].body;
    assert_eq!(body["model"], "mock-3b");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["top_p"], 1.0);
    assert_eq!(body["seed"], 9);
    assert_eq!(body["logprobs"], true);
    assert!(body["max_tokens"].as_u64().unwrap() > 0);
    assert!(support::prompt_of(&reqs[0]).contains("Revenue rose 5%."));
}

#[test]
fn self_reported_without_logprob_support() {
    let server = MockServer::start(|_, _| good());
    let out = run_agent(&client(), &spec(&server.url, false), &DecodingConfig::deterministic(1), &record(), &options()).unwrap();
    assert_eq!(out.confidence_source, ConfidenceSource::SelfReported);
    assert_eq!(out.confidence, 0.7);
    assert!(server.requests()[0].body.get("logprobs").is_none());
}

#[test]
fn transient_failures_back_off_then_succeed() {
    let server = MockServer::start(|_, prior| match prior {
        0 => Reply::Status(503),
        1 => Reply::Hangup,
        _ => good(),
    });
    let out = run_agent(&client(), &spec(&server.url, true), &DecodingConfig::deterministic(1), &record(), &options()).unwrap();
    assert_eq!(out.retry_count, 0, "transport retries are not schema retries");
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn exhausted_backoff_fails_loudly() {
    let server = MockServer::start(|_, _| Reply::Status(500));
    let err = run_agent(&client(), &spec(&server.url, true), &DecodingConfig::deterministic(1), &record(), &options()).unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 3, .. }), "{err}");
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn client_error_is_not_retried() {
    let server = MockServer::start(|_, _| Reply::Status(401));
    let err = run_agent(&client(), &spec(&server.url, true), &DecodingConfig::deterministic(1), &record(), &options()).unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 1, .. }));
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn schema_violations_retry_once_then_fallback() {
    let server = MockServer::start(|_, _| Reply::Content {
        text: r#"{"label": "bullish", "rationale": "x", "confidence": 0.9}"#.into(),
        logprob: -0.2,
    });
    let out = run_agent(&client(), &spec(&server.url, true), &DecodingConfig::deterministic(1), &record(), &options()).unwrap();
    assert_eq!(server.requests().len(), 2);
    assert_eq!(
        (out.label, out.confidence, out.confidence_source, out.retry_count),
        (SentimentLabel::Neutral, 0.0, ConfidenceSource::Fallback, 1)
    );
    let reqs = server.requests();
    assert_eq!(reqs[0].body, reqs[1].body, "retry must repeat the identical request");
}

#[test]
fn violation_then_valid_uses_second_answer() {
    let server = MockServer::start(|_, prior| {
        if prior == 0 {
            Reply::Content {
                text: "I cannot answer in JSON.".into(),
                logprob: -0.3,
            }
        } else {
            good()
        }
    });
    let out = run_agent(&client(), &spec(&server.url, true), &DecodingConfig::deterministic(1), &record(), &options()).unwrap();
    assert_eq!((out.label, out.retry_count), (SentimentLabel::Positive, 1));
}
