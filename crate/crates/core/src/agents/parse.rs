//! Strict parsing of the constrained `{"label", "rationale", "confidence"}`
//! agent reply.

use std::fmt;
use std::ops::Range;

use serde_json::{Map, Value};

use crate::domain::SentimentLabel;

use super::confidence::clip_confidence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    NoJson,
    MissingKey,
    BadLabel,
    BadConfidence,
    ExtraKeys,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct SchemaViolation {
    pub kind: ViolationKind,
    pub detail: String,
}

impl SchemaViolation {
    pub fn new(kind: ViolationKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedOutput {
    pub label: SentimentLabel,
    pub rationale: String,
    /// Self-reported confidence after clipping to [0,1].
    pub self_confidence: f64,
    /// The extracted JSON object as it appeared in the generation.
    pub json: String,
    /// Byte span of the label value's characters (inside the quotes) in
    /// the full generated text.
    pub label_span: Range<usize>,
}

const REQUIRED_KEYS: [&str; 3] = ["label", "rationale", "confidence"];

/// Byte ranges of every balanced `{...}` candidate, in order of their
/// opening brace. Braces inside JSON strings are ignored.
fn balanced_objects(text: &str) -> impl Iterator<Item = Range<usize>> + '_ {
    text.match_indices('{').filter_map(move |(start, _)| {
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (off, c) in text[start..].char_indices() {
            if in_string {
                match c {
                    _ if escaped => escaped = false,
                    '\\' => escaped = true,
                    '"' => in_string = false,
                    _ => {}
                }
                continue;
            }
            match c {
                '"' => in_string = true,
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(start..start + off + 1);
                    }
                }
                _ => {}
            }
        }
        None
    })
}

/// Span of the string value for a top-level `key` in a JSON object text,
/// excluding the quotes.
fn top_level_value_span(object: &str, key: &str) -> Option<Range<usize>> {
    let bytes = object.as_bytes();
    let mut depth = 0usize;
    let mut i = 0;
    let mut pending_key: Option<&str> = None;
    while i < bytes.len() {
        match bytes[i] {
            b'"' => {
                let start = i + 1;
                let mut j = start;
                while j < bytes.len() && bytes[j] != b'"' {
                    j += if bytes[j] == b'\\' { 2 } else { 1 };
                }
                if j >= bytes.len() {
                    return None;
                }
                let content = object.get(start..j)?;
                if depth == 1 {
                    let rest = object[j + 1..].trim_start();
                    if rest.starts_with(':') {
                        pending_key = Some(content);
                    } else if pending_key == Some(key) {
                        return Some(start..j);
                    } else {
                        pending_key = None;
                    }
                }
                i = j + 1;
                continue;
            }
            b'{' | b'[' => depth += 1,
            b'}' | b']' => depth = depth.saturating_sub(1),
            b',' if depth == 1 => pending_key = None,
            _ => {}
        }
        i += 1;
    }
    None
}

fn confidence_value(value: &Value) -> Result<f64, SchemaViolation> {
    let raw = match value {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    }
    .ok_or_else(|| {
        SchemaViolation::new(ViolationKind::BadConfidence, format!("not a number: {value}"))
    })?;
    clip_confidence(raw)
}

fn check_object(
    map: &Map<String, Value>,
    strict_keys: bool,
) -> Result<(SentimentLabel, String, f64), SchemaViolation> {
    for key in REQUIRED_KEYS {
        if !map.contains_key(key) {
            return Err(SchemaViolation::new(ViolationKind::MissingKey, key));
        }
    }
    if strict_keys {
        let extra: Vec<&str> = map
            .keys()
            .map(String::as_str)
            .filter(|k| !REQUIRED_KEYS.contains(k))
            .collect();
        if !extra.is_empty() {
            return Err(SchemaViolation::new(ViolationKind::ExtraKeys, extra.join(",")));
        }
    }
    let label = map["label"]
        .as_str()
        .and_then(|s| s.parse::<SentimentLabel>().ok())
        .ok_or_else(|| SchemaViolation::new(ViolationKind::BadLabel, map["label"].to_string()))?;
    let rationale = map["rationale"]
        .as_str()
        .ok_or_else(|| SchemaViolation::new(ViolationKind::MissingKey, "rationale is not a string"))?
        .to_string();
    let confidence = confidence_value(&map["confidence"])?;
    Ok((label, rationale, confidence))
}

/// Parses a generation into its label, rationale and clipped self-reported
/// confidence.
///
/// The first balanced `{...}` that is valid JSON is taken as the answer;
/// text around it is ignored. With `strict_keys`, keys other than the
/// three required ones are a violation.
pub fn parse_output(text: &str, strict_keys: bool) -> Result<ParsedOutput, SchemaViolation> {
    for range in balanced_objects(text) {
        let candidate = &text[range.clone()];
        let Ok(Value::Object(map)) = serde_json::from_str::<Value>(candidate) else {
            continue;
        };
        let (label, rationale, self_confidence) = check_object(&map, strict_keys)?;
        let label_span = top_level_value_span(candidate, "label")
            .map(|span| range.start + span.start..range.start + span.end)
            .ok_or_else(|| SchemaViolation::new(ViolationKind::BadLabel, "label span not found"))?;
        return Ok(ParsedOutput {
            label,
            rationale,
            self_confidence,
            json: candidate.to_string(),
            label_span,
        });
    }
    Err(SchemaViolation::new(
        ViolationKind::NoJson,
        "no parseable JSON object in generation",
    ))
}
