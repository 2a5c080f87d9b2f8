use super::EvalError;
use serde::{Deserialize, Serialize};

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Fraction of `class` members predicted as `class`; `None` when the class
/// is absent from `labels`.
pub fn recall(predictions: &[usize], labels: &[usize], class: usize) -> Result<Option<f64>, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), labels.len()));
    }
    let members = labels.iter().filter(|&&l| l == class).count();
    if members == 0 {
        return Ok(None);
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| **l == class && **p == class)
        .count();
    Ok(Some(hits as f64 / members as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub acc: f64,
    pub recall_pos: Option<f64>,
    pub recall_neg: Option<f64>,
}

impl FoldMetrics {
    pub fn compute(fold: usize, predictions: &[usize], labels: &[usize]) -> Result<Self, EvalError> {
        Ok(FoldMetrics {
            fold,
            acc: accuracy(predictions, labels)?,
            recall_pos: recall(predictions, labels, 1)?,
            recall_neg: recall(predictions, labels, 0)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub config_hash: String,
    pub variant: String,
    pub folds: Vec<FoldMetrics>,
    pub mean_acc: f64,
}

impl MetricsRecord {
    /// `run_id` is derived from the variant, config hash and fold seed, so
    /// repeated runs of the same setup share an id.
    pub fn new(variant: &str, config_hash: String, seed: u64, mut folds: Vec<FoldMetrics>) -> Self {
        folds.sort_by_key(|f| f.fold);
        let mean_acc = if folds.is_empty() {
            0.0
        } else {
            folds.iter().map(|f| f.acc).sum::<f64>() / folds.len() as f64
        };
        let short = &config_hash[..config_hash.len().min(12)];
        MetricsRecord {
            run_id: format!("{variant}-{short}-s{seed}"),
            config_hash,
            variant: variant.to_string(),
            folds,
            mean_acc,
        }
    }

    pub fn mean_recall_pos(&self) -> Option<f64> {
        let vals: Vec<f64> = self.folds.iter().filter_map(|f| f.recall_pos).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}
