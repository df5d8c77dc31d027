//! Classifiers and the evaluation protocol.
//!
//! Feature matrices are row-major, one row per patient. Raw matrices carry
//! `Option<f64>` cells for absent features; a [`Normalizer`] fitted on the
//! training rows imputes and scales them into dense `f64` rows. Targets are
//! `0` (normal) and `1` (at-risk).

mod cv;
mod logreg;
mod metrics;
mod normalize;
mod select;
mod svm;

use serde::{Deserialize, Serialize};

pub use cv::{
    ensemble_predict, five_fold_evaluate, loo_evaluate, stratified_kfold, AuditEntry, EnsembleMethod, EvalConfig,
    FiveFoldResult, FoldPlan, LooResult, PatientScore, SelectionConfig,
};
pub use logreg::{train_logreg, LogRegConfig, LogRegModel};
pub use metrics::{auc, compute_metrics, mcc, mean_metrics, roc_csv, roc_curve, Confusion, EvalReport, MeanMetrics, RocPoint};
pub use normalize::Normalizer;
pub use select::{forward_select, pearson, pearson_prune, PruneResult, SelectionStep, SelectionTrace};
pub use svm::{train_svm, Kernel, SvmConfig, SvmModel};

pub type RawMatrix = [Vec<Option<f64>>];

#[derive(Debug, thiserror::Error)]
pub enum MlError {
    #[error("training set is empty or too small ({0} rows)")]
    TooFewRows(usize),
    #[error("training set contains a single class")]
    SingleClass,
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("row {row} has {got} features, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("could not build folds with both classes in every training split after {0} attempts")]
    FoldFailure(usize),
}

/// Checks shape and label agreement; returns the feature count.
pub(crate) fn check_xy<T>(x: &[Vec<T>], y: &[u8]) -> Result<usize, MlError> {
    if x.len() != y.len() {
        return Err(MlError::LengthMismatch { rows: x.len(), labels: y.len() });
    }
    let d = x.first().map_or(0, Vec::len);
    for (row, r) in x.iter().enumerate() {
        if r.len() != d {
            return Err(MlError::Ragged { row, got: r.len(), expected: d });
        }
    }
    if let Some(bad) = y.iter().find(|v| **v > 1) {
        return Err(MlError::Config(format!("label {bad} is not 0 or 1")));
    }
    Ok(d)
}

pub(crate) fn class_counts(y: &[u8]) -> [usize; 2] {
    let pos = y.iter().filter(|v| **v == 1).count();
    [y.len() - pos, pos]
}

/// Loss multipliers inversely proportional to class frequency, so both
/// classes carry equal total weight.
pub fn balanced_class_weights(y: &[u8]) -> [f64; 2] {
    let [neg, pos] = class_counts(y);
    let n = y.len() as f64;
    let w = |c: usize| if c == 0 { 0.0 } else { n / (2.0 * c as f64) };
    [w(neg), w(pos)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Logreg(LogRegConfig),
    Svm(SvmConfig),
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Logreg(LogRegConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Logreg(LogRegModel),
    Svm(SvmModel),
}

impl Model {
    pub fn fit(config: &ModelConfig, x: &[Vec<f64>], y: &[u8]) -> Result<Self, MlError> {
        Ok(match config {
            ModelConfig::Logreg(c) => Model::Logreg(train_logreg(x, y, c)?),
            ModelConfig::Svm(c) => Model::Svm(train_svm(x, y, c)?),
        })
    }

    /// Probability of the at-risk class. For the SVM this is the logistic
    /// transform of the decision value, so 0.5 sits on the boundary.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        match self {
            Model::Logreg(m) => m.predict_proba(x),
            Model::Svm(m) => m.predict_proba(x),
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_weights_equalize_class_mass() {
        let y = [0, 0, 0, 1];
        let w = balanced_class_weights(&y);
        assert!((3.0 * w[0] - w[1]).abs() < 1e-12);
        assert!((3.0 * w[0] + w[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shape_checks() {
        assert!(matches!(check_xy(&[vec![1.0], vec![1.0, 2.0]], &[0, 1]), Err(MlError::Ragged { row: 1, .. })));
        assert!(matches!(check_xy(&[vec![1.0]], &[0, 1]), Err(MlError::LengthMismatch { .. })));
        assert!(check_xy(&[vec![1.0]], &[2]).is_err());
    }
}
