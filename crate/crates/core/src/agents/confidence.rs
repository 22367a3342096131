use std::ops::Range;

use crate::domain::TokenLogprob;

use super::parse::{SchemaViolation, ViolationKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LogprobError {
    #[error("no label tokens")]
    Empty,
    #[error("invalid token log probability {0}")]
    Invalid(String),
}

/// Geometric-mean token probability, `exp(mean(logprobs))`.
pub fn confidence_from_logprobs(logprobs: &[f64]) -> Result<f64, LogprobError> {
    if logprobs.is_empty() {
        return Err(LogprobError::Empty);
    }
    if let Some(bad) = logprobs.iter().find(|lp| !(lp.is_finite() && **lp <= 0.0)) {
        return Err(LogprobError::Invalid(bad.to_string()));
    }
    let mean = logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    Ok(mean.exp())
}

pub fn clip_confidence(v: f64) -> Result<f64, SchemaViolation> {
    if !v.is_finite() {
        return Err(SchemaViolation::new(
            ViolationKind::BadConfidence,
            format!("non-finite confidence {v}"),
        ));
    }
    Ok(v.clamp(0.0, 1.0))
}

/// Tokens from the server stream whose text overlaps `span`, a byte range
/// of the generated text. Returns `None` when the stream does not spell
/// out `text` exactly.
pub fn label_tokens(
    tokens: &[TokenLogprob],
    text: &str,
    span: Range<usize>,
) -> Option<Vec<TokenLogprob>> {
    let joined: String = tokens.iter().map(|t| t.token.as_str()).collect();
    if joined != text {
        return None;
    }
    let mut offset = 0;
    let mut picked = Vec::new();
    for token in tokens {
        let end = offset + token.token.len();
        if end > span.start && offset < span.end {
            picked.push(token.clone());
        }
        offset = end;
    }
    Some(picked)
}
