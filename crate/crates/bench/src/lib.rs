//! Fixtures shared by the benchmarks.

use ensemble_judge::agents::AgentSpec;
use ensemble_judge::features::{build_features, FeatureRow};
use ensemble_judge::ingest::{preprocess, PreprocessConfig};
use ensemble_judge::synth::{generate_corpus, stub_agent, StubNoise};
use ensemble_judge::{target_from_return, AgentOutput, DisclosureRecord, Lens};

pub fn stub_specs() -> Vec<AgentSpec> {
    Lens::ALL
        .iter()
        .map(|&lens| AgentSpec {
            lens,
            model_name: format!("stub-{lens}"),
            endpoint_url: "stub://local".into(),
            supports_logprobs: false,
        })
        .collect()
}

/// Synthetic disclosures with their three stub outputs.
pub fn synthetic_outputs(n: usize, seed: u64) -> Vec<(DisclosureRecord, [AgentOutput; 3])> {
    let corpus = generate_corpus(n, seed).expect("n >= 100");
    let specs = stub_specs();
    let noise = StubNoise::default();
    let cfg = PreprocessConfig::default();
    corpus
        .lines
        .into_iter()
        .zip(corpus.latents)
        .map(|(line, row)| {
            let record = DisclosureRecord {
                clean_text: preprocess(&line.text, &cfg),
                binary_target: target_from_return(line.next_day_return).expect("finite"),
                id: line.id,
                timestamp: line.timestamp,
                ticker: line.ticker,
                raw_text: line.text,
                next_day_return: line.next_day_return,
            };
            let outs = [0, 1, 2].map(|k| stub_agent(&specs[k], &record, &row.latents, &noise, seed));
            (record, outs)
        })
        .collect()
}

pub fn feature_rows(data: &[(DisclosureRecord, [AgentOutput; 3])]) -> Vec<FeatureRow> {
    data.iter()
        .map(|(r, outs)| FeatureRow {
            disclosure_id: r.id.clone(),
            features: build_features(&outs.iter().collect::<Vec<_>>()).expect("one output per lens"),
            target: r.binary_target,
        })
        .collect()
}
