use super::metrics::FoldMetrics;
use super::{fit_logreg, fit_mlp, DatasetRecord, EvalError, FoldPlan, LogRegConfig, MetricsRecord, MlpConfig};
use crate::model::{ablation_rows, train, ModelConfig, PreparedSample, VsLlm};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;

fn hash_json(value: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable config");
    hex::encode(Sha256::digest(bytes))
}

fn check_plan(records: &[DatasetRecord], plan: &FoldPlan) -> Result<(), EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    if plan.assignments.len() != records.len() {
        return Err(EvalError::LengthMismatch(plan.assignments.len(), records.len()));
    }
    Ok(())
}

fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Trains a fresh model per fold on the other folds and scores it on the
/// held-out one. `captions[i]` belongs to `records[i]`.
pub fn cross_validate(
    records: &[DatasetRecord],
    captions: &[String],
    config: &ModelConfig,
    plan: &FoldPlan,
    variant: &str,
) -> Result<MetricsRecord, EvalError> {
    check_plan(records, plan)?;
    if captions.len() != records.len() {
        return Err(EvalError::LengthMismatch(captions.len(), records.len()));
    }
    let template = VsLlm::new(config.clone())?;
    let samples: Vec<PreparedSample> = records
        .iter()
        .zip(captions)
        .map(|(r, c)| template.prepare(&r.sketch, c, r.label))
        .collect::<Result<_, _>>()?;
    let mut folds = Vec::with_capacity(plan.k);
    for fold in plan.scored() {
        let (train_idx, test_idx) = plan.split(fold);
        let train_set: Vec<&PreparedSample> = train_idx.iter().map(|&i| &samples[i]).collect();
        let mut model = template.clone();
        train(&mut model, &train_set, |_, _| {})?;
        let preds = test_idx
            .iter()
            .map(|&i| model.logits(&samples[i]).map(|l| usize::from(l[1] > l[0])))
            .collect::<Result<Vec<_>, _>>()?;
        let labels: Vec<usize> = test_idx.iter().map(|&i| samples[i].label).collect();
        folds.push(FoldMetrics::compute(fold, &preds, &labels)?);
    }
    Ok(MetricsRecord::new(variant, config.config_hash(), plan.seed, folds))
}

/// Scaled FEATS vectors, failing on the first record without one.
pub(crate) fn feats_matrix(records: &[DatasetRecord]) -> Result<Vec<Vec<f64>>, EvalError> {
    records
        .iter()
        .map(|r| {
            r.feats
                .map(|f| f.scaled())
                .ok_or_else(|| EvalError::MissingFeats(r.record_id.clone()))
        })
        .collect()
}

pub fn cross_validate_logreg(
    records: &[DatasetRecord],
    plan: &FoldPlan,
    cfg: &LogRegConfig,
) -> Result<MetricsRecord, EvalError> {
    check_plan(records, plan)?;
    let xs = feats_matrix(records)?;
    let ys = super::labels(records);
    let mut folds = Vec::with_capacity(plan.k);
    for fold in plan.scored() {
        let (train_idx, test_idx) = plan.split(fold);
        let model = fit_logreg(&pick(&xs, &train_idx), &pick(&ys, &train_idx), cfg)?;
        let preds: Vec<usize> = test_idx.iter().map(|&i| model.predict(&xs[i])).collect();
        folds.push(FoldMetrics::compute(fold, &preds, &pick(&ys, &test_idx))?);
    }
    Ok(MetricsRecord::new("logreg", hash_json(cfg), plan.seed, folds))
}

pub fn cross_validate_mlp(records: &[DatasetRecord], plan: &FoldPlan, cfg: &MlpConfig) -> Result<MetricsRecord, EvalError> {
    check_plan(records, plan)?;
    let xs = feats_matrix(records)?;
    let ys = super::labels(records);
    let mut folds = Vec::with_capacity(plan.k);
    for fold in plan.scored() {
        let (train_idx, test_idx) = plan.split(fold);
        let model = fit_mlp(&pick(&xs, &train_idx), &pick(&ys, &train_idx), cfg)?;
        let preds = model.predict(&pick(&xs, &test_idx))?;
        folds.push(FoldMetrics::compute(fold, &preds, &pick(&ys, &test_idx))?);
    }
    Ok(MetricsRecord::new("mlp", hash_json(cfg), plan.seed, folds))
}

/// One metrics record per standard ablation row, in row order.
pub fn run_ablation(
    records: &[DatasetRecord],
    captions: &[String],
    base: &ModelConfig,
    plan: &FoldPlan,
) -> Result<Vec<MetricsRecord>, EvalError> {
    ablation_rows()
        .into_iter()
        .map(|(name, switches)| {
            let cfg = switches.apply(base)?;
            cross_validate(records, captions, &cfg, plan, name)
        })
        .collect()
}

/// A prediction made by a classifier outside this crate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalPrediction {
    pub record_id: String,
    pub predicted: usize,
}

/// Newline-delimited `{record_id, predicted}` objects.
pub fn parse_predictions(text: &str) -> Result<Vec<ExternalPrediction>, EvalError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: ExternalPrediction = serde_json::from_str(line).map_err(|e| EvalError::Schema {
            line: n + 1,
            message: e.to_string(),
        })?;
        if p.predicted > 1 {
            return Err(EvalError::Schema {
                line: n + 1,
                message: format!("predicted must be 0 or 1, got {}", p.predicted),
            });
        }
        out.push(p);
    }
    Ok(out)
}

/// Scores externally computed predictions against the same fold plan the
/// built-in models use.
pub fn score_predictions(
    records: &[DatasetRecord],
    plan: &FoldPlan,
    predictions: &[ExternalPrediction],
    variant: &str,
) -> Result<MetricsRecord, EvalError> {
    check_plan(records, plan)?;
    let by_id: HashMap<&str, usize> = predictions.iter().map(|p| (p.record_id.as_str(), p.predicted)).collect();
    let preds = records
        .iter()
        .map(|r| {
            by_id
                .get(r.record_id.as_str())
                .copied()
                .ok_or_else(|| EvalError::MissingPrediction(r.record_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ys = super::labels(records);
    let mut folds = Vec::with_capacity(plan.k);
    for fold in plan.scored() {
        let (_, test_idx) = plan.split(fold);
        folds.push(FoldMetrics::compute(fold, &pick(&preds, &test_idx), &pick(&ys, &test_idx))?);
    }
    Ok(MetricsRecord::new(variant, hash_json(&predictions), plan.seed, folds))
}
