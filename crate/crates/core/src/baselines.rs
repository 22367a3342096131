//! Fixed-rule predictors: single agents, majority vote and the
//! confidence-weighted vote. All map to the binary target.

use crate::domain::{binarize_label, AgentOutput};
use crate::error::Result;
use crate::features::{labels_and_confidences, majority_label, order_by_lens};

pub fn single_agent_predict(output: &AgentOutput) -> u8 {
    binarize_label(output.label)
}

/// Three-way majority (with the most-confident fallback), then binarized.
pub fn majority_vote_predict(outputs: &[&AgentOutput]) -> Result<u8> {
    let ordered = order_by_lens(outputs)?;
    let (labels, confs) = labels_and_confidences(&ordered);
    Ok(binarize_label(majority_label(labels, confs)))
}

/// Sum of confidence times numeric label over the agents.
pub fn confidence_vote_score(outputs: &[&AgentOutput]) -> f64 {
    outputs
        .iter()
        .map(|o| o.confidence * f64::from(o.label.code()))
        .sum()
}

/// 1 when the score is strictly positive.
pub fn confidence_vote_predict(outputs: &[&AgentOutput]) -> u8 {
    u8::from(confidence_vote_score(outputs) > 0.0)
}
