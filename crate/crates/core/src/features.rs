//! The aggregation feature vector built from three agent outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{AgentOutput, FeatureVector, Lens, SentimentLabel, FEATURE_DIM};
use crate::error::{Error, Result};

/// Index of the highest confidence; exact ties go to the earlier agent
/// (performance, then guidance, then risk).
pub fn most_confident_agent(confidences: [f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if confidences[i] > confidences[best] {
            best = i;
        }
    }
    best
}

/// Largest minus second-largest confidence.
pub fn confidence_gap(confidences: [f64; 3]) -> f64 {
    let mut sorted = confidences;
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted[0] - sorted[1]
}

/// Counts of positive, neutral and negative labels, in that order.
pub fn label_counts(labels: [SentimentLabel; 3]) -> [usize; 3] {
    let mut counts = [0; 3];
    for l in labels {
        let slot = match l {
            SentimentLabel::Positive => 0,
            SentimentLabel::Neutral => 1,
            SentimentLabel::Negative => 2,
        };
        counts[slot] += 1;
    }
    counts
}

/// The label held by at least two agents, or, when all three differ, the
/// label of the most confident agent.
pub fn majority_label(labels: [SentimentLabel; 3], confidences: [f64; 3]) -> SentimentLabel {
    if labels[0] == labels[1] || labels[0] == labels[2] {
        labels[0]
    } else if labels[1] == labels[2] {
        labels[1]
    } else {
        labels[most_confident_agent(confidences)]
    }
}

/// Number of agents sharing the modal label; 1 when all labels differ.
pub fn agreement_count(labels: [SentimentLabel; 3]) -> usize {
    label_counts(labels).into_iter().max().unwrap_or(0)
}

/// Orders outputs by lens, rejecting a missing or repeated lens.
pub fn order_by_lens<'a>(outputs: &[&'a AgentOutput]) -> Result<[&'a AgentOutput; 3]> {
    let mut slots: [Option<&AgentOutput>; 3] = [None; 3];
    for out in outputs {
        let slot = &mut slots[out.agent.index()];
        if slot.is_some() {
            return Err(Error::RejectedInput(format!(
                "duplicate {} output for {}",
                out.agent, out.disclosure_id
            )));
        }
        *slot = Some(out);
    }
    let mut ordered = Vec::with_capacity(3);
    for (lens, slot) in Lens::ALL.iter().zip(slots) {
        ordered.push(slot.ok_or_else(|| {
            Error::RejectedInput(format!(
                "missing {lens} output for {}",
                outputs.first().map(|o| o.disclosure_id.as_str()).unwrap_or("?")
            ))
        })?);
    }
    if ordered.iter().any(|o| o.disclosure_id != ordered[0].disclosure_id) {
        return Err(Error::RejectedInput(
            "outputs belong to different disclosures".into(),
        ));
    }
    Ok([ordered[0], ordered[1], ordered[2]])
}

pub(crate) fn labels_and_confidences(
    outputs: &[&AgentOutput; 3],
) -> ([SentimentLabel; 3], [f64; 3]) {
    (
        outputs.map(|o| o.label),
        outputs.map(|o| o.confidence),
    )
}

/// Builds the 15-position feature vector. Outputs may be given in any
/// order; slots are filled in lens order.
pub fn build_features(outputs: &[&AgentOutput]) -> Result<FeatureVector> {
    let ordered = order_by_lens(outputs)?;
    let (labels, confs) = labels_and_confidences(&ordered);
    let mut v = [0.0; FEATURE_DIM];
    for i in 0..3 {
        v[FeatureVector::LABELS + i] = f64::from(labels[i].code());
        v[FeatureVector::CONFIDENCES + i] = confs[i];
    }
    v[FeatureVector::MAJORITY] = f64::from(majority_label(labels, confs).code());
    let counts = label_counts(labels);
    for i in 0..3 {
        v[FeatureVector::COUNTS + i] = counts[i] as f64;
    }
    v[FeatureVector::AGREEMENT] = agreement_count(labels) as f64;
    v[FeatureVector::GAP] = confidence_gap(confs);
    v[FeatureVector::MOST_CONFIDENT + most_confident_agent(confs)] = 1.0;
    Ok(FeatureVector(v))
}

/// One exported feature row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub disclosure_id: String,
    pub features: FeatureVector,
    pub target: u8,
}

pub fn write_feature_rows(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    crate::ingest::write_jsonl(path, rows)
}

pub fn read_feature_rows(path: &Path) -> Result<Vec<FeatureRow>> {
    crate::ingest::read_jsonl(path)
}
