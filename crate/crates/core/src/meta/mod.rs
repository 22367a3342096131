//! The trained aggregator: standardization, L2 logistic regression and
//! dev-split selection of the regularization strength.

mod logistic;
mod model;

pub use logistic::{
    fit_logistic, l2_penalty, logistic_loss_and_gradient, sigmoid, Design, FitOptions,
    LogisticFit, OptimizerReport,
};
pub use model::{
    tune_c, GridScore, MetaModel, ModelFile, Standardizer, DEFAULT_C_GRID, STANDARDIZED_POSITIONS,
};
