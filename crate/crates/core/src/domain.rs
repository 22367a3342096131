//! Value types shared across the pipeline: labels, lenses, disclosure
//! records, agent outputs, the aggregation feature vector and split
//! assignments.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Three-way sentiment judgment with numeric codes -1, 0, +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Negative,
    Neutral,
    Positive,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 3] = [Self::Negative, Self::Neutral, Self::Positive];

    pub fn code(self) -> i8 {
        match self {
            Self::Negative => -1,
            Self::Neutral => 0,
            Self::Positive => 1,
        }
    }

    pub fn from_code(code: i8) -> Option<Self> {
        match code {
            -1 => Some(Self::Negative),
            0 => Some(Self::Neutral),
            1 => Some(Self::Positive),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Negative => "negative",
            Self::Neutral => "neutral",
            Self::Positive => "positive",
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SentimentLabel {
    type Err = Error;

    /// Case-insensitive, surrounding whitespace ignored.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "negative" => Ok(Self::Negative),
            "neutral" => Ok(Self::Neutral),
            "positive" => Ok(Self::Positive),
            other => Err(Error::RejectedInput(format!("unknown sentiment label {other:?}"))),
        }
    }
}

/// The financial perspective an agent's prompt fixes. Declaration order is
/// the canonical agent order used for feature slots and tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lens {
    Performance,
    Guidance,
    Risk,
}

impl Lens {
    pub const ALL: [Lens; 3] = [Self::Performance, Self::Guidance, Self::Risk];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Performance => "performance",
            Self::Guidance => "guidance",
            Self::Risk => "risk",
        }
    }
}

impl fmt::Display for Lens {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Lens {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "performance" => Ok(Self::Performance),
            "guidance" => Ok(Self::Guidance),
            "risk" => Ok(Self::Risk),
            other => Err(Error::RejectedInput(format!("unknown agent lens {other:?}"))),
        }
    }
}

/// Downstream binary mapping: positive is 1, neutral and negative are 0.
pub fn binarize_label(label: SentimentLabel) -> u8 {
    u8::from(label == SentimentLabel::Positive)
}

/// Return direction target. Zero returns are non-positive and map to 0.
pub fn target_from_return(r: f64) -> Result<u8> {
    if !r.is_finite() {
        return Err(Error::RejectedInput(format!("non-finite return {r}")));
    }
    Ok(u8::from(r > 0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisclosureRecord {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    pub ticker: String,
    pub raw_text: String,
    pub clean_text: String,
    pub next_day_return: f64,
    pub binary_target: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceSource {
    TokenLogprob,
    SelfReported,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

/// One agent's judgment on one disclosure, with the provenance needed to
/// replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutput {
    pub disclosure_id: String,
    pub agent: Lens,
    pub label: SentimentLabel,
    pub confidence: f64,
    pub rationale: String,
    pub confidence_source: ConfidenceSource,
    /// Clipped value from the JSON `confidence` field, kept even when the
    /// token-logprob confidence is the one used.
    #[serde(default)]
    pub self_reported_confidence: Option<f64>,
    /// Tokens of the label string with their log probabilities, when the
    /// server returned them.
    #[serde(default)]
    pub label_token_logprobs: Vec<TokenLogprob>,
    pub model_name: String,
    pub prompt_hash: String,
    pub seed: u64,
    pub raw_json: String,
    pub retry_count: u8,
}

impl AgentOutput {
    /// Checks the cross-field invariants of a single output.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::RejectedInput(format!(
                "confidence {} outside [0,1] for {}/{}",
                self.confidence, self.disclosure_id, self.agent
            )));
        }
        if self.retry_count > 1 {
            return Err(Error::RejectedInput(format!(
                "retry_count {} exceeds 1",
                self.retry_count
            )));
        }
        if self.confidence_source == ConfidenceSource::Fallback
            && (self.label != SentimentLabel::Neutral || self.confidence != 0.0)
        {
            return Err(Error::RejectedInput(
                "fallback output must be neutral with zero confidence".into(),
            ));
        }
        Ok(())
    }
}

pub const FEATURE_DIM: usize = 15;

/// Aggregation features for one disclosure.
///
/// Layout: `[0..3]` agent labels, `[3..6]` agent confidences, `[6]` majority
/// label, `[7..10]` positive/neutral/negative counts, `[10]` size of the modal
/// group, `[11]` top-two confidence gap, `[12..15]` one-hot most confident
/// agent. Agent slots follow [`Lens::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub const LABELS: usize = 0;
    pub const CONFIDENCES: usize = 3;
    pub const MAJORITY: usize = 6;
    pub const COUNTS: usize = 7;
    pub const AGREEMENT: usize = 10;
    pub const GAP: usize = 11;
    pub const MOST_CONFIDENT: usize = 12;

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Dev,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Self::Train, Self::Dev, Self::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Dev => "dev",
            Self::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub id: String,
    pub partition: Partition,
}

/// Partition of a corpus, stored in the chronological sort order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitAssignment {
    pub entries: Vec<SplitEntry>,
}

impl SplitAssignment {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self, partition: Partition) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(move |e| e.partition == partition)
            .map(|e| e.id.as_str())
    }

    pub fn count(&self, partition: Partition) -> usize {
        self.entries.iter().filter(|e| e.partition == partition).count()
    }

    pub fn partition_of(&self, id: &str) -> Option<Partition> {
        self.entries.iter().find(|e| e.id == id).map(|e| e.partition)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_maps_only_positive_to_one() {
        assert_eq!(binarize_label(SentimentLabel::Positive), 1);
        assert_eq!(binarize_label(SentimentLabel::Neutral), 0);
        assert_eq!(binarize_label(SentimentLabel::Negative), 0);
    }

    #[test]
    fn target_is_strict_indicator() {
        assert_eq!(target_from_return(0.012).unwrap(), 1);
        assert_eq!(target_from_return(0.0).unwrap(), 0);
        assert_eq!(target_from_return(-0.0).unwrap(), 0);
        assert_eq!(target_from_return(-0.004).unwrap(), 0);
        assert!(matches!(
            target_from_return(f64::NAN),
            Err(Error::RejectedInput(_))
        ));
        assert!(target_from_return(f64::INFINITY).is_err());
    }

    #[test]
    fn label_strings_round_trip() {
        for label in SentimentLabel::ALL {
            assert_eq!(label.as_str().parse::<SentimentLabel>().unwrap(), label);
            assert_eq!(SentimentLabel::from_code(label.code()), Some(label));
            let json = serde_json::to_string(&label).unwrap();
            assert_eq!(serde_json::from_str::<SentimentLabel>(&json).unwrap(), label);
        }
        assert_eq!("  POSITIVE ".parse::<SentimentLabel>().unwrap(), SentimentLabel::Positive);
        assert!("bullish".parse::<SentimentLabel>().is_err());
        assert_eq!(SentimentLabel::from_code(2), None);
    }

    #[test]
    fn fallback_invariant_enforced() {
        let mut out = AgentOutput {
            disclosure_id: "d".into(),
            agent: Lens::Risk,
            label: SentimentLabel::Neutral,
            confidence: 0.0,
            rationale: String::new(),
            confidence_source: ConfidenceSource::Fallback,
            self_reported_confidence: None,
            label_token_logprobs: vec![],
            model_name: "m".into(),
            prompt_hash: "h".into(),
            seed: 1,
            raw_json: String::new(),
            retry_count: 1,
        };
        out.validate().unwrap();
        out.confidence = 0.3;
        assert!(out.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn target_monotone(a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            proptest::prop_assert!(target_from_return(lo).unwrap() <= target_from_return(hi).unwrap());
        }
    }
}
