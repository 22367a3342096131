//! Synthetic corpora with hidden three-lens latents, and stub agents that
//! read them.

use std::collections::HashMap;
use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{prompt_hash, render_prompt, AgentSpec, Judge};
use crate::domain::{AgentOutput, ConfidenceSource, DisclosureRecord, Lens, SentimentLabel};
use crate::error::{Error, Result};
use crate::ingest::{read_jsonl, write_jsonl, CorpusLine};

pub const MIN_SYNTH_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentDisclosure {
    pub performance_signal: f64,
    pub guidance_signal: f64,
    pub risk_signal: f64,
    pub noise_seed: u64,
}

impl LatentDisclosure {
    /// The sentiment direction implied for a lens. High risk reads negative.
    pub fn direction(&self, lens: Lens) -> f64 {
        match lens {
            Lens::Performance => self.performance_signal,
            Lens::Guidance => self.guidance_signal,
            Lens::Risk => -self.risk_signal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRow {
    pub id: String,
    #[serde(flatten)]
    pub latents: LatentDisclosure,
}

/// Return model `r = w_p·perf + w_g·guid − w_r·risk + noise_scale·N(0,1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnModel {
    pub weights: [f64; 3],
    pub noise_scale: f64,
}

impl Default for ReturnModel {
    fn default() -> Self {
        Self {
            weights: [0.4, 0.5, 0.3],
            noise_scale: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub lines: Vec<CorpusLine>,
    pub latents: Vec<LatentRow>,
}

fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2015, 1, 2, 13, 0, 0).single().expect("valid date")
}

fn render_text(i: usize, ticker: &str, l: &LatentDisclosure) -> String {
    format!(
        "TICKER: {ticker}\nFORM: 8-K\n\nSynthetic disclosure {i}.\n\
         Performance signal {:+.4}. Guidance signal {:+.4}. Risk signal {:+.4}.",
        l.performance_signal, l.guidance_signal, l.risk_signal
    )
}

pub fn generate_corpus(n: usize, seed: u64) -> Result<SyntheticCorpus> {
    generate_corpus_with(n, seed, &ReturnModel::default())
}

/// Draws `n` latent triples uniformly from `[-1,1]³` and derives returns
/// from `model`. Timestamps advance by three hours per record.
pub fn generate_corpus_with(n: usize, seed: u64, model: &ReturnModel) -> Result<SyntheticCorpus> {
    if n < MIN_SYNTH_SIZE {
        return Err(Error::Config(format!(
            "synthetic corpus needs at least {MIN_SYNTH_SIZE} records, got {n}"
        )));
    }
    if !(model.noise_scale.is_finite() && model.noise_scale >= 0.0) {
        return Err(Error::Config("return noise scale must be finite and non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = n.to_string().len().max(5);
    let mut lines = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    for i in 0..n {
        let l = LatentDisclosure {
            performance_signal: rng.random_range(-1.0..=1.0),
            guidance_signal: rng.random_range(-1.0..=1.0),
            risk_signal: rng.random_range(-1.0..=1.0),
            noise_seed: rng.random(),
        };
        let eps: f64 = rng.sample(StandardNormal);
        let [wp, wg, wr] = model.weights;
        let r = wp * l.performance_signal + wg * l.guidance_signal - wr * l.risk_signal
            + model.noise_scale * eps;
        let ticker = format!("SYN{:03}", rng.random_range(0..400u32));
        let id = format!("syn-{i:0width$}");
        lines.push(CorpusLine {
            id: id.clone(),
            timestamp: epoch() + Duration::hours(3 * i as i64),
            text: render_text(i, &ticker, &l),
            ticker,
            next_day_return: r,
        });
        latents.push(LatentRow { id, latents: l });
    }
    Ok(SyntheticCorpus { lines, latents })
}

pub fn write_latents(path: &Path, rows: &[LatentRow]) -> Result<()> {
    write_jsonl(path, rows)
}

pub fn read_latents(path: &Path) -> Result<HashMap<String, LatentDisclosure>> {
    let rows: Vec<LatentRow> = read_jsonl(path)?;
    let mut map = HashMap::with_capacity(rows.len());
    for row in rows {
        if map.insert(row.id.clone(), row.latents).is_some() {
            return Err(Error::DuplicateId(row.id));
        }
    }
    Ok(map)
}

/// Per-lens observation noise of the stub agents: agent `k` sees
/// `direction_k + bias_k + sigma_k·N(0,1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StubNoise {
    pub sigma: [f64; 3],
    pub bias: [f64; 3],
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    0.15
}

impl Default for StubNoise {
    /// Guidance reads cleanest. Guidance and risk agents both lean negative.
    fn default() -> Self {
        Self {
            sigma: [0.4, 0.1, 0.4],
            bias: [0.0, -0.4, -0.3],
            threshold: default_threshold(),
        }
    }
}

impl StubNoise {
    pub fn zero() -> Self {
        Self {
            sigma: [0.0; 3],
            bias: [0.0; 3],
            threshold: default_threshold(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite();
        if !self.sigma.iter().all(|&s| ok(s) && s >= 0.0) || !self.bias.iter().all(|&b| ok(b)) {
            return Err(Error::Config("stub noise must be finite with sigma >= 0".into()));
        }
        if !(ok(self.threshold) && self.threshold >= 0.0) {
            return Err(Error::Config("stub threshold must be non-negative".into()));
        }
        Ok(())
    }
}

fn stub_rng(lens: Lens, disclosure_id: &str, latents: &LatentDisclosure, seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(latents.noise_seed.to_le_bytes());
    h.update(lens.as_str().as_bytes());
    h.update([0]);
    h.update(disclosure_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// The noisy reading a stub agent makes of its own lens.
pub fn stub_observation(
    lens: Lens,
    disclosure_id: &str,
    latents: &LatentDisclosure,
    noise: &StubNoise,
    seed: u64,
) -> f64 {
    let k = lens.index();
    let eps: f64 = stub_rng(lens, disclosure_id, latents, seed).sample(StandardNormal);
    latents.direction(lens) + noise.bias[k] + noise.sigma[k] * eps
}

/// Stub judgment: the label thresholds the observation at `±threshold`, the
/// confidence is its clipped magnitude. Reported as self-reported confidence.
pub fn stub_agent(
    spec: &AgentSpec,
    record: &DisclosureRecord,
    latents: &LatentDisclosure,
    noise: &StubNoise,
    seed: u64,
) -> AgentOutput {
    let obs = stub_observation(spec.lens, &record.id, latents, noise, seed);
    let label = if obs > noise.threshold {
        SentimentLabel::Positive
    } else if obs < -noise.threshold {
        SentimentLabel::Negative
    } else {
        SentimentLabel::Neutral
    };
    let confidence = obs.abs().min(1.0);
    let rationale = format!("The {} reading is {}.", spec.lens, label);
    let raw_json = serde_json::json!({
        "label": label.as_str(),
        "rationale": rationale,
        "confidence": confidence,
    })
    .to_string();
    AgentOutput {
        disclosure_id: record.id.clone(),
        agent: spec.lens,
        label,
        confidence,
        rationale,
        confidence_source: ConfidenceSource::SelfReported,
        self_reported_confidence: Some(confidence),
        label_token_logprobs: Vec::new(),
        model_name: spec.model_name.clone(),
        prompt_hash: prompt_hash(&render_prompt(spec.lens, &record.clean_text)),
        seed,
        raw_json,
        retry_count: 0,
    }
}

/// [`Judge`] that answers from a latents table instead of a model.
#[derive(Debug, Clone)]
pub struct StubJudge {
    pub latents: HashMap<String, LatentDisclosure>,
    pub noise: StubNoise,
    pub seed: u64,
}

impl Judge for StubJudge {
    fn judge(&self, spec: &AgentSpec, record: &DisclosureRecord) -> Result<AgentOutput> {
        let latents = self.latents.get(&record.id).ok_or_else(|| {
            Error::MissingArtifact(format!("no synthetic latents for disclosure {}", record.id))
        })?;
        Ok(stub_agent(spec, record, latents, &self.noise, self.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::target_from_return;

    fn spec(lens: Lens) -> AgentSpec {
        AgentSpec {
            lens,
            model_name: format!("stub-{lens}"),
            endpoint_url: "stub://".into(),
            supports_logprobs: false,
        }
    }

    fn record(id: &str) -> DisclosureRecord {
        DisclosureRecord {
            id: id.into(),
            timestamp: epoch(),
            ticker: "SYN001".into(),
            raw_text: "x".into(),
            clean_text: "x".into(),
            next_day_return: 0.0,
            binary_target: 0,
        }
    }

    fn latents(p: f64, g: f64, r: f64) -> LatentDisclosure {
        LatentDisclosure {
            performance_signal: p,
            guidance_signal: g,
            risk_signal: r,
            noise_seed: 7,
        }
    }

    #[test]
    fn deterministic_corpus() {
        assert_eq!(generate_corpus(200, 3).unwrap(), generate_corpus(200, 3).unwrap());
        assert_ne!(generate_corpus(200, 3).unwrap(), generate_corpus(200, 4).unwrap());
    }

    #[test]
    fn too_small_rejected() {
        assert!(generate_corpus(99, 1).is_err());
    }

    #[test]
    fn timestamps_strictly_increase_and_latents_bounded() {
        let c = generate_corpus(500, 9).unwrap();
        assert!(c.lines.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        for row in &c.latents {
            let l = row.latents;
            for v in [l.performance_signal, l.guidance_signal, l.risk_signal] {
                assert!((-1.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn positive_rate_near_half() {
        let c = generate_corpus(1000, 42).unwrap();
        let pos = c.lines.iter().filter(|l| l.next_day_return > 0.0).count() as f64 / 1000.0;
        assert!((0.4..=0.6).contains(&pos), "{pos}");
    }

    #[test]
    fn zero_noise_target_is_function_of_latents() {
        let model = ReturnModel {
            noise_scale: 0.0,
            ..ReturnModel::default()
        };
        let c = generate_corpus_with(300, 5, &model).unwrap();
        for (line, row) in c.lines.iter().zip(&c.latents) {
            let l = row.latents;
            let r = 0.4 * l.performance_signal + 0.5 * l.guidance_signal - 0.3 * l.risk_signal;
            assert_eq!(target_from_return(line.next_day_return).unwrap(), target_from_return(r).unwrap());
        }
    }

    #[test]
    fn zero_noise_thresholding() {
        let z = StubNoise::zero();
        let out = stub_agent(&spec(Lens::Performance), &record("a"), &latents(0.9, 0.0, 0.0), &z, 1);
        assert_eq!((out.label, out.confidence), (SentimentLabel::Positive, 0.9));
        let out = stub_agent(&spec(Lens::Guidance), &record("a"), &latents(0.0, 0.05, 0.0), &z, 1);
        assert_eq!(out.label, SentimentLabel::Neutral);
        let out = stub_agent(&spec(Lens::Risk), &record("a"), &latents(0.0, 0.0, 0.8), &z, 1);
        assert_eq!(out.label, SentimentLabel::Negative);
        out.validate().unwrap();
    }

    #[test]
    fn stub_is_deterministic() {
        let n = StubNoise::default();
        let l = latents(0.2, -0.3, 0.4);
        let a = stub_agent(&spec(Lens::Risk), &record("a"), &l, &n, 11);
        assert_eq!(a, stub_agent(&spec(Lens::Risk), &record("a"), &l, &n, 11));
        assert_ne!(
            stub_observation(Lens::Risk, "a", &l, &n, 11),
            stub_observation(Lens::Risk, "a", &l, &n, 12)
        );
    }

    #[test]
    fn stub_prompt_hash_matches_cache_key() {
        let s = spec(Lens::Guidance);
        let r = record("a");
        let out = stub_agent(&s, &r, &latents(0.1, 0.1, 0.1), &StubNoise::default(), 3);
        assert_eq!(crate::store::CacheKey::of_output(&out), crate::store::CacheKey::for_record(&s, 3, &r));
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn cross_lens_errors_uncorrelated() {
        let c = generate_corpus(20_000, 42).unwrap();
        let noise = StubNoise::default();
        // error = signed stub reading minus the clipped true direction
        let errors: Vec<Vec<f64>> = Lens::ALL
            .iter()
            .map(|&lens| {
                c.latents
                    .iter()
                    .map(|row| {
                        let out = stub_agent(&spec(lens), &record(&row.id), &row.latents, &noise, 42);
                        f64::from(out.label.code()) * out.confidence
                            - row.latents.direction(lens).clamp(-1.0, 1.0)
                    })
                    .collect()
            })
            .collect();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let r = correlation(&errors[i], &errors[j]);
            assert!(r.abs() < 0.15, "lenses {i},{j}: {r}");
        }
    }

    #[test]
    fn latents_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("latents.jsonl");
        let c = generate_corpus(100, 1).unwrap();
        write_latents(&path, &c.latents).unwrap();
        let map = read_latents(&path).unwrap();
        assert_eq!(map.len(), 100);
        assert_eq!(map[&c.latents[5].id], c.latents[5].latents);
    }
}
