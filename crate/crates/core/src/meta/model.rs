use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::domain::{FeatureVector, Lens, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::features::FeatureRow;

use super::logistic::{fit_logistic, sigmoid, Design, FitOptions, LogisticFit, OptimizerReport};

/// Positions rescaled by the standardizer: the three confidences and the
/// confidence gap. Everything else is a small bounded integer kept raw.
pub const STANDARDIZED_POSITIONS: [usize; 4] = [3, 4, 5, 11];

pub const DEFAULT_C_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: [f64; FEATURE_DIM],
    pub stds: [f64; FEATURE_DIM],
    pub standardized_mask: [bool; FEATURE_DIM],
}

impl Standardizer {
    pub fn identity() -> Self {
        Self {
            means: [0.0; FEATURE_DIM],
            stds: [1.0; FEATURE_DIM],
            standardized_mask: [false; FEATURE_DIM],
        }
    }

    /// Population mean and standard deviation of the masked columns over
    /// the training rows. A constant column keeps std 1.
    pub fn fit(rows: &[FeatureVector]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Fit("cannot standardize an empty training set".into()));
        }
        if rows.len() < 2 {
            warn!("standardizing from a single training row");
        }
        let mut s = Self::identity();
        let n = rows.len() as f64;
        for &j in &STANDARDIZED_POSITIONS {
            s.standardized_mask[j] = true;
            let mean = rows.iter().map(|r| r.0[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r.0[j] - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            s.means[j] = mean;
            s.stds[j] = if std > 1e-12 {
                std
            } else {
                warn!(column = j, "constant feature column, leaving unscaled");
                1.0
            };
        }
        Ok(s)
    }

    pub fn apply(&self, v: &FeatureVector) -> [f64; FEATURE_DIM] {
        let mut out = v.0;
        for (j, x) in out.iter_mut().enumerate() {
            if self.standardized_mask[j] {
                *x = (*x - self.means[j]) / self.stds[j];
            }
        }
        out
    }
}

/// Dev-split balanced accuracy for one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub c: f64,
    pub dev_balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub inverse_reg_strength: f64,
    pub standardizer: Standardizer,
    pub optimizer_report: OptimizerReport,
    #[serde(default)]
    pub dev_scores: Vec<GridScore>,
}

impl MetaModel {
    pub fn from_fit(fit: LogisticFit, c: f64, standardizer: Standardizer) -> Self {
        Self {
            weights: fit.weights,
            intercept: fit.intercept,
            inverse_reg_strength: c,
            standardizer,
            optimizer_report: fit.report,
            dev_scores: Vec::new(),
        }
    }

    pub fn decision_value(&self, features: &FeatureVector) -> f64 {
        let z = self.standardizer.apply(features);
        self.weights.iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + self.intercept
    }

    pub fn predict_proba(&self, features: &FeatureVector) -> f64 {
        sigmoid(self.decision_value(features))
    }

    /// Threshold 0.5, with 0.5 itself assigned to the positive class.
    pub fn predict(&self, features: &FeatureVector) -> u8 {
        u8::from(self.predict_proba(features) >= 0.5)
    }

    /// Weights and intercept acting on unstandardized features.
    pub fn raw_coefficients(&self) -> (Vec<f64>, f64) {
        let s = &self.standardizer;
        let mut intercept = self.intercept;
        let weights = (0..FEATURE_DIM)
            .map(|j| {
                if s.standardized_mask[j] {
                    intercept -= self.weights[j] * s.means[j] / s.stds[j];
                    self.weights[j] / s.stds[j]
                } else {
                    self.weights[j]
                }
            })
            .collect();
        (weights, intercept)
    }
}

fn design(rows: &[FeatureRow], standardizer: &Standardizer) -> Result<(Design, Vec<u8>)> {
    let mut data = Vec::with_capacity(rows.len() * FEATURE_DIM);
    for r in rows {
        data.extend_from_slice(&standardizer.apply(&r.features));
    }
    Ok((
        Design::new(data, FEATURE_DIM)?,
        rows.iter().map(|r| r.target).collect(),
    ))
}

fn balanced_accuracy_of(model: &MetaModel, rows: &[FeatureRow]) -> Result<f64> {
    let cm = ConfusionMatrix::from_pairs(rows.iter().map(|r| (model.predict(&r.features), r.target)));
    Ok(cm.metrics()?.balanced_accuracy)
}

/// Fits on `train` for each C and keeps the one with the best dev
/// balanced accuracy; exact ties go to the smallest C.
pub fn tune_c(
    train: &[FeatureRow],
    dev: &[FeatureRow],
    grid: &[f64],
    opts: &FitOptions,
) -> Result<MetaModel> {
    if grid.is_empty() {
        return Err(Error::Config("regularization grid is empty".into()));
    }
    let standardizer = Standardizer::fit(&train.iter().map(|r| r.features).collect::<Vec<_>>())?;
    let (x, y) = design(train, &standardizer)?;
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, MetaModel)> = None;
    for &c in &grid {
        let fit = fit_logistic(&x, &y, c, opts)?;
        let model = MetaModel::from_fit(fit, c, standardizer.clone());
        let score = balanced_accuracy_of(&model, dev)?;
        info!(c, dev_balanced_accuracy = score, iterations = model.optimizer_report.iterations, "grid point");
        scores.push(GridScore {
            c,
            dev_balanced_accuracy: score,
        });
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, model));
        }
    }
    let (_, mut model) = best.expect("grid is non-empty");
    model.dev_scores = scores;
    Ok(model)
}

/// Trained model plus what it was trained on, so later stages can refuse
/// stale inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub model: MetaModel,
    /// Hash of each lens's prompt template.
    pub prompt_template_hashes: IndexMap<Lens, String>,
    pub model_names: IndexMap<Lens, String>,
    pub seed: u64,
    /// SHA-256 over the sorted prompt hashes of every training and dev
    /// output.
    pub training_outputs_digest: String,
    pub train_rows: usize,
    pub dev_rows: usize,
}

impl ModelFile {
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut json = serde_json::to_string_pretty(self).map_err(|e| Error::io(path, e.into()))?;
        json.push('\n');
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(format!("model file missing: {}", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}
