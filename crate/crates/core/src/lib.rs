//! Three lens-specific zero-shot judges, a replayable output cache, and a
//! logistic meta-classifier over their joint labels and confidences.

pub mod agents;
pub mod baselines;
pub mod config;
pub mod domain;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod meta;
pub mod pipeline;
pub mod store;
pub mod synth;

pub use config::{BackendConfig, Paths, RunConfig};
pub use domain::{
    binarize_label, target_from_return, AgentOutput, ConfidenceSource, DisclosureRecord,
    FeatureVector, Lens, Partition, SentimentLabel, SplitAssignment, FEATURE_DIM,
};
pub use error::{Error, Result};
pub use eval::{EvalReport, Metrics, Regime};
pub use meta::MetaModel;
