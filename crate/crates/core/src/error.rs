use std::path::PathBuf;

use crate::agents::SchemaViolation;
use crate::meta::OptimizerReport;
use crate::store::CacheKey;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate disclosure id {0:?}")]
    DuplicateId(String),

    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("schema violation: {0}")]
    Schema(#[from] SchemaViolation),

    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("store integrity error: {0}")]
    Integrity(String),

    #[error("corrupted store line at byte offset {offset}: {message}")]
    CorruptStore { offset: u64, message: String },

    #[error("cache coverage incomplete: {} missing key(s), first: {}", .missing.len(), .missing.first().map(ToString::to_string).unwrap_or_default())]
    Coverage { missing: Vec<CacheKey> },

    #[error("{0}")]
    MissingArtifact(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("split is degenerate: {0}")]
    DegenerateSplit(String),

    #[error("cannot fit model: {0}")]
    Fit(String),

    #[error("optimizer did not converge after {} iterations (gradient norm {:e})", .0.iterations, .0.final_gradient_norm)]
    NonConvergence(OptimizerReport),

    #[error("stale artifact: {0}")]
    Stale(String),
}

impl Error {
    /// Process exit status: 1 usage or general failure, 2 missing
    /// prerequisite artifact, 3 integrity or coverage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingArtifact(_) => 2,
            Error::Integrity(_)
            | Error::CorruptStore { .. }
            | Error::Coverage { .. }
            | Error::Stale(_)
            | Error::DuplicateId(_)
            | Error::Malformed { .. }
            | Error::RejectedInput(_) => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
