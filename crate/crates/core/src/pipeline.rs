//! The pipeline stages as functions over the artifacts in the work
//! directory. Each stage reads what earlier stages wrote and fails with a
//! typed error when a prerequisite is missing, stale or incomplete.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use indexmap::IndexMap;
use serde::Serialize;
use sha2::{Digest, Sha256};
use tracing::info;

use crate::agents::{template_hash, EndpointJudge, HttpChatClient, Judge, run_jobs};
use crate::config::{BackendConfig, RunConfig};
use crate::domain::{AgentOutput, ConfidenceSource, DisclosureRecord, Partition, SplitAssignment};
use crate::error::{Error, Result};
use crate::eval::{evaluate as evaluate_cases, render_text, EvalCase, EvalReport};
use crate::features::{build_features as features_of, read_feature_rows, write_feature_rows, FeatureRow};
use crate::ingest::{
    chronological_split, load_corpus, preprocess_all, read_records, read_split, write_records,
    write_split, DEFAULT_FRACTIONS,
};
use crate::meta::{tune_c, GridScore, ModelFile, OptimizerReport};
use crate::store::{CacheKey, CacheRecord, PutOutcome, Store};
use crate::synth::{read_latents, StubJudge};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub records: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

/// Loads and preprocesses the corpus, then writes the records (in split
/// order) and the split.
pub fn ingest(cfg: &RunConfig, corpus: &Path) -> Result<IngestSummary> {
    let mut records = load_corpus(corpus)?;
    preprocess_all(&mut records, &cfg.preprocess);
    let split = chronological_split(&records, DEFAULT_FRACTIONS)?;
    let mut by_id: HashMap<String, DisclosureRecord> =
        records.into_iter().map(|r| (r.id.clone(), r)).collect();
    let ordered: Vec<DisclosureRecord> = split
        .entries
        .iter()
        .map(|e| by_id.remove(&e.id).expect("split covers the corpus"))
        .collect();
    let paths = cfg.paths();
    write_records(&paths.records, &ordered)?;
    write_split(&paths.split, &split)?;
    Ok(IngestSummary {
        records: split.len(),
        train: split.count(Partition::Train),
        dev: split.count(Partition::Dev),
        test: split.count(Partition::Test),
    })
}

/// Records and split, joined and in split order.
struct Inputs {
    records: Vec<DisclosureRecord>,
    split: SplitAssignment,
}

impl Inputs {
    fn load(cfg: &RunConfig, split_path: Option<&Path>) -> Result<Self> {
        let paths = cfg.paths();
        let split = read_split(split_path.unwrap_or(&paths.split))?;
        let mut by_id: HashMap<String, DisclosureRecord> = read_records(&paths.records)?
            .into_iter()
            .map(|r| (r.id.clone(), r))
            .collect();
        let records = split
            .entries
            .iter()
            .map(|e| {
                by_id.remove(&e.id).ok_or_else(|| {
                    Error::Stale(format!("split names {} but records.jsonl does not hold it", e.id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { records, split })
    }

    fn partition(&self, p: Partition) -> Vec<&DisclosureRecord> {
        self.split
            .entries
            .iter()
            .zip(&self.records)
            .filter(|(e, _)| e.partition == p)
            .map(|(_, r)| r)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub pairs: usize,
    pub cached_before: usize,
    pub generated: usize,
    pub fallbacks: usize,
    pub missing: usize,
}

/// The judge named by the config's backend section.
pub fn judge_from_config(cfg: &RunConfig) -> Result<Box<dyn Judge>> {
    Ok(match &cfg.backend {
        BackendConfig::Http { timeout_secs } => Box::new(EndpointJudge {
            backend: HttpChatClient::from_env(Duration::from_secs(*timeout_secs)),
            decoding: cfg.decoding,
            options: cfg.protocol(),
        }),
        BackendConfig::Stub { latents, noise } => Box::new(StubJudge {
            latents: read_latents(latents)?,
            noise: *noise,
            seed: cfg.seed,
        }),
    })
}

pub fn run_agents(cfg: &RunConfig, split_path: Option<&Path>) -> Result<RunSummary> {
    let judge = judge_from_config(cfg)?;
    run_agents_with(cfg, split_path, judge.as_ref())
}

/// Queries `judge` for every (disclosure, agent) pair not yet cached and
/// appends the results. Safe to rerun after an interruption.
pub fn run_agents_with(
    cfg: &RunConfig,
    split_path: Option<&Path>,
    judge: &dyn Judge,
) -> Result<RunSummary> {
    let inputs = Inputs::load(cfg, split_path)?;
    let mut store = Store::open(cfg.paths().store)?;
    let all: Vec<&DisclosureRecord> = inputs.records.iter().collect();
    let pairs = all.len() * cfg.agents.len();
    let jobs: Vec<_> = all
        .iter()
        .flat_map(|r| cfg.agents.iter().map(move |a| (a.clone(), *r)))
        .filter(|(a, r)| !store.contains(&CacheKey::for_record(a, cfg.seed, r)))
        .collect();
    let cached_before = pairs - jobs.len();
    info!(pairs, cached_before, pending = jobs.len(), "running agents");

    let (mut generated, mut fallbacks) = (0usize, 0usize);
    let result = run_jobs(judge, &jobs, cfg.max_in_flight, |output| {
        if output.confidence_source == ConfidenceSource::Fallback {
            fallbacks += 1;
        }
        if store.put(CacheRecord::new(output))? == PutOutcome::Appended {
            generated += 1;
            if generated % cfg.sync_every == 0 {
                store.sync()?;
            }
        }
        Ok(())
    });
    store.sync()?;
    result?;
    let missing = store.coverage(&all, &cfg.agents, cfg.seed).len();
    Ok(RunSummary {
        pairs,
        cached_before,
        generated,
        fallbacks,
        missing,
    })
}

fn outputs_for<'s>(
    store: &'s Store,
    cfg: &RunConfig,
    record: &DisclosureRecord,
) -> Result<[&'s AgentOutput; 3]> {
    let mut found = Vec::with_capacity(3);
    for spec in &cfg.agents {
        found.push(store.output_for(spec, cfg.seed, record).ok_or_else(|| Error::Coverage {
            missing: vec![CacheKey::for_record(spec, cfg.seed, record)],
        })?);
    }
    Ok([found[0], found[1], found[2]])
}

fn require_coverage(store: &Store, cfg: &RunConfig, records: &[&DisclosureRecord]) -> Result<()> {
    let missing = store.coverage(records, &cfg.agents, cfg.seed);
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Coverage { missing })
    }
}

fn feature_rows(store: &Store, cfg: &RunConfig, records: &[&DisclosureRecord]) -> Result<Vec<FeatureRow>> {
    records
        .iter()
        .map(|r| {
            Ok(FeatureRow {
                disclosure_id: r.id.clone(),
                features: features_of(&outputs_for(store, cfg, r)?)?,
                target: r.binary_target,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeatureSummary {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

/// Writes one feature file per partition. Every pair must be cached.
pub fn build_features(cfg: &RunConfig) -> Result<FeatureSummary> {
    let inputs = Inputs::load(cfg, None)?;
    let store = Store::open_read_only(cfg.paths().store)?;
    require_coverage(&store, cfg, &inputs.records.iter().collect::<Vec<_>>())?;
    let paths = cfg.paths();
    let mut counts = [0usize; 3];
    for (slot, p) in Partition::ALL.into_iter().enumerate() {
        let rows = feature_rows(&store, cfg, &inputs.partition(p))?;
        counts[slot] = rows.len();
        write_feature_rows(&paths.features(p), &rows)?;
    }
    Ok(FeatureSummary {
        train: counts[0],
        dev: counts[1],
        test: counts[2],
    })
}

/// SHA-256 over the sorted prompt hashes of the outputs behind `records`.
fn outputs_digest(store: &Store, cfg: &RunConfig, records: &[&DisclosureRecord]) -> Result<String> {
    let mut hashes = Vec::with_capacity(records.len() * 3);
    for r in records {
        for o in outputs_for(store, cfg, r)? {
            hashes.push(o.prompt_hash.as_str());
        }
    }
    hashes.sort_unstable();
    let mut h = Sha256::new();
    for s in hashes {
        h.update(s.as_bytes());
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

fn read_checked_features(
    cfg: &RunConfig,
    store: &Store,
    p: Partition,
    records: &[&DisclosureRecord],
) -> Result<Vec<FeatureRow>> {
    let path = cfg.paths().features(p);
    let rows = read_feature_rows(&path).map_err(|e| match e {
        Error::MissingArtifact(_) => Error::MissingArtifact(format!(
            "feature file missing: {} (run build-features)",
            path.display()
        )),
        other => other,
    })?;
    if rows != feature_rows(store, cfg, records)? {
        return Err(Error::Stale(format!(
            "{} does not match the cache; rerun build-features",
            path.display()
        )));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub inverse_reg_strength: f64,
    pub optimizer_report: OptimizerReport,
    pub dev_scores: Vec<GridScore>,
    pub train_rows: usize,
    pub dev_rows: usize,
}

/// Fits the meta-classifier. Refuses to run unless every train and dev
/// pair is cached and the feature files agree with the cache.
pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    let inputs = Inputs::load(cfg, None)?;
    let store = Store::open_read_only(cfg.paths().store)?;
    let train = inputs.partition(Partition::Train);
    let dev = inputs.partition(Partition::Dev);
    let fit_records: Vec<&DisclosureRecord> = train.iter().chain(&dev).copied().collect();
    require_coverage(&store, cfg, &fit_records)?;

    let train_rows = read_checked_features(cfg, &store, Partition::Train, &train)?;
    let dev_rows = read_checked_features(cfg, &store, Partition::Dev, &dev)?;
    let model = tune_c(&train_rows, &dev_rows, &cfg.c_grid, &cfg.fit)?;

    let file = ModelFile {
        prompt_template_hashes: cfg.agents.iter().map(|a| (a.lens, template_hash(a.lens))).collect(),
        model_names: cfg.agents.iter().map(|a| (a.lens, a.model_name.clone())).collect(),
        seed: cfg.seed,
        training_outputs_digest: outputs_digest(&store, cfg, &fit_records)?,
        train_rows: train_rows.len(),
        dev_rows: dev_rows.len(),
        model,
    };
    file.write(&cfg.paths().model)?;
    Ok(TrainSummary {
        inverse_reg_strength: file.model.inverse_reg_strength,
        optimizer_report: file.model.optimizer_report,
        dev_scores: file.model.dev_scores.clone(),
        train_rows: file.train_rows,
        dev_rows: file.dev_rows,
    })
}

fn check_model_matches(file: &ModelFile, cfg: &RunConfig) -> Result<()> {
    let templates: IndexMap<_, _> = cfg.agents.iter().map(|a| (a.lens, template_hash(a.lens))).collect();
    let names: IndexMap<_, _> = cfg.agents.iter().map(|a| (a.lens, a.model_name.clone())).collect();
    if file.prompt_template_hashes != templates {
        return Err(Error::Stale("model was trained with different prompt templates".into()));
    }
    if file.model_names != names || file.seed != cfg.seed {
        return Err(Error::Stale(
            "model was trained for different agent models or seed; rerun train".into(),
        ));
    }
    Ok(())
}

/// Scores every method on the test split and writes the JSON and text
/// reports.
pub fn evaluate(cfg: &RunConfig) -> Result<EvalReport> {
    let paths = cfg.paths();
    let file = ModelFile::read(&paths.model)?;
    check_model_matches(&file, cfg)?;
    let inputs = Inputs::load(cfg, None)?;
    let store = Store::open_read_only(&paths.store)?;
    let test = inputs.partition(Partition::Test);
    require_coverage(&store, cfg, &test)?;

    let fit_records: Vec<&DisclosureRecord> = inputs
        .partition(Partition::Train)
        .into_iter()
        .chain(inputs.partition(Partition::Dev))
        .collect();
    let digest = outputs_digest(&store, cfg, &fit_records)
        .map_err(|_| Error::Stale("cache no longer holds the outputs the model was trained on".into()))?;
    if digest != file.training_outputs_digest {
        return Err(Error::Stale(
            "cached training outputs differ from those the model was trained on".into(),
        ));
    }

    let cases = test
        .iter()
        .map(|r| {
            let outputs = outputs_for(&store, cfg, r)?;
            Ok(EvalCase {
                disclosure_id: &r.id,
                features: features_of(&outputs)?,
                outputs,
                target: r.binary_target,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_cases(&cases, &file.model, cfg.delta, &cfg.delta_sensitivity)?;

    let mut json = serde_json::to_string_pretty(&report).map_err(|e| Error::io(&paths.report_json, e.into()))?;
    json.push('\n');
    std::fs::write(&paths.report_json, json).map_err(|e| Error::io(&paths.report_json, e))?;
    std::fs::write(&paths.report_text, render_text(&report))
        .map_err(|e| Error::io(&paths.report_text, e))?;
    Ok(report)
}

pub fn read_report(cfg: &RunConfig) -> Result<EvalReport> {
    let path = cfg.paths().report_json;
    let text = std::fs::read_to_string(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(format!("report file missing: {} (run evaluate)", path.display()))
        } else {
            Error::io(&path, e)
        }
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path,
        line: e.line(),
        message: e.to_string(),
    })
}
