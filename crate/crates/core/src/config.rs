//! The single JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentSpec, DecodingConfig, ProtocolOptions, RetryPolicy};
use crate::domain::Lens;
use crate::error::{Error, Result};
use crate::eval::DEFAULT_DELTA;
use crate::ingest::PreprocessConfig;
use crate::meta::{FitOptions, DEFAULT_C_GRID};
use crate::synth::StubNoise;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Http {
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
    Stub {
        latents: PathBuf,
        #[serde(default)]
        noise: StubNoise,
    },
}

fn default_timeout_secs() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Directory holding every stage artifact.
    pub work_dir: PathBuf,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    pub decoding: DecodingConfig,
    pub agents: Vec<AgentSpec>,
    pub backend: BackendConfig,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_true")]
    pub strict_keys: bool,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Store fsync cadence during run-agents, in appended records.
    #[serde(default = "default_sync_every")]
    pub sync_every: usize,
    #[serde(default = "default_grid")]
    pub c_grid: Vec<f64>,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_sensitivity")]
    pub delta_sensitivity: Vec<f64>,
}

fn default_in_flight() -> usize {
    4
}

fn default_true() -> bool {
    true
}

fn default_sync_every() -> usize {
    64
}

fn default_grid() -> Vec<f64> {
    DEFAULT_C_GRID.to_vec()
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_sensitivity() -> Vec<f64> {
    vec![0.05, 0.1, 0.2, 0.3]
}

/// Artifact locations under the work directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Paths {
    pub records: PathBuf,
    pub split: PathBuf,
    pub store: PathBuf,
    pub features_dir: PathBuf,
    pub model: PathBuf,
    pub report_json: PathBuf,
    pub report_text: PathBuf,
}

impl Paths {
    pub fn under(work_dir: &Path) -> Self {
        Self {
            records: work_dir.join("records.jsonl"),
            split: work_dir.join("split.jsonl"),
            store: work_dir.join("store.jsonl"),
            features_dir: work_dir.join("features"),
            model: work_dir.join("model.json"),
            report_json: work_dir.join("report.json"),
            report_text: work_dir.join("report.txt"),
        }
    }

    pub fn features(&self, partition: crate::domain::Partition) -> PathBuf {
        self.features_dir.join(format!("{partition}.jsonl"))
    }
}

impl RunConfig {
    /// Reads and validates a config file. Relative paths inside it resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(format!("config file missing: {}", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_relative(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.work_dir);
        if let BackendConfig::Stub { latents, .. } = &mut self.backend {
            fix(latents);
        }
    }

    /// Stub configuration for a synthetic corpus with one stub model per lens.
    pub fn synthetic(work_dir: PathBuf, latents: PathBuf, seed: u64) -> Self {
        Self {
            seed,
            work_dir,
            preprocess: PreprocessConfig::default(),
            decoding: DecodingConfig::deterministic(seed),
            agents: Lens::ALL
                .iter()
                .map(|&lens| AgentSpec {
                    lens,
                    model_name: format!("stub-{lens}"),
                    endpoint_url: "stub://local".into(),
                    supports_logprobs: false,
                })
                .collect(),
            backend: BackendConfig::Stub {
                latents,
                noise: StubNoise::default(),
            },
            max_in_flight: default_in_flight(),
            strict_keys: true,
            retry: RetryPolicy::default(),
            sync_every: default_sync_every(),
            c_grid: default_grid(),
            fit: FitOptions::default(),
            delta: DEFAULT_DELTA,
            delta_sensitivity: default_sensitivity(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.decoding.validate()?;
        if self.decoding.seed != self.seed {
            return Err(Error::Config(format!(
                "decoding.seed {} differs from seed {}",
                self.decoding.seed, self.seed
            )));
        }
        if self.agents.len() != 3 {
            return Err(Error::Config(format!("expected 3 agents, got {}", self.agents.len())));
        }
        for (spec, lens) in self.agents.iter().zip(Lens::ALL) {
            spec.validate()?;
            if spec.lens != lens {
                return Err(Error::Config(format!(
                    "agents must be listed as performance, guidance, risk; found {} in the {} slot",
                    spec.lens, lens
                )));
            }
        }
        if self.max_in_flight == 0 || self.sync_every == 0 {
            return Err(Error::Config("max_in_flight and sync_every must be positive".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(Error::Config("retry.max_attempts must be at least 1".into()));
        }
        if self.c_grid.is_empty() || !self.c_grid.iter().all(|c| c.is_finite() && *c > 0.0) {
            return Err(Error::Config("c_grid must hold positive finite values".into()));
        }
        if !(self.fit.tol > 0.0 && self.fit.max_iter > 0) {
            return Err(Error::Config("fit.tol and fit.max_iter must be positive".into()));
        }
        let delta_ok = |d: f64| (0.0..=1.0).contains(&d);
        if !delta_ok(self.delta) || !self.delta_sensitivity.iter().all(|&d| delta_ok(d)) {
            return Err(Error::Config("delta values must lie in [0,1]".into()));
        }
        if let BackendConfig::Stub { noise, .. } = &self.backend {
            noise.validate()?;
        }
        Ok(())
    }

    pub fn paths(&self) -> Paths {
        Paths::under(&self.work_dir)
    }

    pub fn protocol(&self) -> ProtocolOptions {
        ProtocolOptions {
            strict_keys: self.strict_keys,
            retry: self.retry,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self).map_err(|e| Error::io(path, e.into()))?;
        json.push('\n');
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}
