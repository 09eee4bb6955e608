//! Deterministic statistical primitives shared by every analysis module.

mod folds;
mod logreg;
mod matrix;
mod metrics;
mod standardize;
mod stats;

pub use folds::{stratified_kfold, Fold, DEFAULT_FOLDS};
pub use logreg::{
    gradient, objective, sigmoid, softplus, train_logreg, LinearClassifier, LogisticRegression,
    DEFAULT_C, DEFAULT_GRAD_TOL, DEFAULT_MAX_ITER,
};
pub use matrix::Matrix;
pub use matrix::{dot, norm};
pub use metrics::{
    auroc, auroc_value, bootstrap_ci, percentile_sorted, MetricResult, DEFAULT_BOOTSTRAP,
};
pub use standardize::Standardizer;
pub use stats::{
    cohens_d, mean, normal_cdf, pearson, pooled_std, ranks, sample_variance, spearman, welch_t,
    WelchResult,
};
