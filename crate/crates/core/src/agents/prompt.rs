use sha2::{Digest, Sha256};

use crate::domain::Lens;

pub const DISCLOSURE_PLACEHOLDER: &str = "<DISCLOSURE>";

const PERFORMANCE_TEMPLATE: &str = "Read the corporate disclosure below. Focus on realized operating performance, including earnings, revenue, margins, costs, and reported business outcomes. Decide whether the disclosure is positive, neutral, or negative for next-day stock reaction. Output exactly three fields in JSON format: {\"label\": ..., \"rationale\": ..., \"confidence\": ...}. The rationale must be one sentence and confidence must be a number between 0 and 1. Disclosure: <DISCLOSURE>";

const GUIDANCE_TEMPLATE: &str = "Read the corporate disclosure below. Focus on forward guidance, management outlook, demand expectations, and any revisions to future expectations. Decide whether the disclosure is positive, neutral, or negative for next-day stock reaction. Output exactly three fields in JSON format: {\"label\": ..., \"rationale\": ..., \"confidence\": ...}. The rationale must be one sentence and confidence must be a number between 0 and 1. Disclosure: <DISCLOSURE>";

const RISK_TEMPLATE: &str = "Read the corporate disclosure below. Focus on uncertainty, litigation, regulation, liquidity, operational disruption, and downside risk. Decide whether the disclosure is positive, neutral, or negative for next-day stock reaction. Output exactly three fields in JSON format: {\"label\": ..., \"rationale\": ..., \"confidence\": ...}. The rationale must be one sentence and confidence must be a number between 0 and 1. Disclosure: <DISCLOSURE>";

pub fn prompt_template(lens: Lens) -> &'static str {
    match lens {
        Lens::Performance => PERFORMANCE_TEMPLATE,
        Lens::Guidance => GUIDANCE_TEMPLATE,
        Lens::Risk => RISK_TEMPLATE,
    }
}

pub fn render_prompt(lens: Lens, clean_text: &str) -> String {
    prompt_template(lens).replacen(DISCLOSURE_PLACEHOLDER, clean_text, 1)
}

/// Hex SHA-256 of the exact prompt bytes.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

pub fn template_hash(lens: Lens) -> String {
    prompt_hash(prompt_template(lens))
}
