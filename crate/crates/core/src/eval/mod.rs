//! Labeled corpus handling, cross-validation, metrics, FEATS-score
//! baselines, and a synthetic corpus generator.

mod baselines;
mod cv;
mod folds;
mod metrics;
mod synth;

pub use baselines::{fit_logreg, fit_mlp, LogReg, LogRegConfig, Mlp, MlpConfig};
pub use cv::{
    cross_validate, cross_validate_logreg, cross_validate_mlp, parse_predictions, run_ablation,
    score_predictions, ExternalPrediction,
};
pub use folds::{holdout_preset, make_folds, stratified_assignment, FoldPlan, HOLDOUT_TEST_NEG, HOLDOUT_TEST_POS};
pub use metrics::{accuracy, recall, FoldMetrics, MetricsRecord};
pub use synth::synth_corpus;

use crate::model::ModelError;
use crate::sketch::{Sketch, SketchError};
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

pub const PHQ9_THRESHOLD: u32 = 10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("PHQ-9 item {index} has value {value}; items range 0-3")]
    ItemOutOfRange { index: usize, value: u8 },
    #[error("PHQ-9 total {stated} does not equal item sum {actual}")]
    TotalMismatch { stated: u32, actual: u32 },
    #[error("record `{0}` label disagrees with its PHQ-9 total")]
    LabelMismatch(String),
    #[error("FEATS score {index} = {value} outside [0, 5]")]
    FeatsOutOfRange { index: usize, value: f64 },
    #[error("FEATS vector needs 14 scores, got {0}")]
    FeatsLength(usize),
    #[error("record `{0}` has no FEATS vector")]
    MissingFeats(String),
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("class {class} has {count} records; need at least {needed}")]
    TooFewRecords { class: usize, count: usize, needed: usize },
    #[error("positive fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
    #[error("corpus size {0} below 10")]
    InvalidCount(usize),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("no prediction for record `{0}`")]
    MissingPrediction(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Nine questionnaire items scored 0-3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Phq9Doc", into = "Phq9Doc")]
pub struct Phq9Response {
    items: [u8; 9],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Phq9Doc {
    items: [u8; 9],
    #[serde(default)]
    total: Option<u32>,
}

impl TryFrom<Phq9Doc> for Phq9Response {
    type Error = EvalError;

    fn try_from(doc: Phq9Doc) -> Result<Self, EvalError> {
        let r = Phq9Response::new(doc.items)?;
        match doc.total {
            Some(stated) if stated != r.total() => Err(EvalError::TotalMismatch {
                stated,
                actual: r.total(),
            }),
            _ => Ok(r),
        }
    }
}

impl From<Phq9Response> for Phq9Doc {
    fn from(r: Phq9Response) -> Self {
        Phq9Doc {
            items: r.items,
            total: Some(r.total()),
        }
    }
}

impl Phq9Response {
    pub fn new(items: [u8; 9]) -> Result<Self, EvalError> {
        if let Some((index, &value)) = items.iter().enumerate().find(|(_, &v)| v > 3) {
            return Err(EvalError::ItemOutOfRange { index, value });
        }
        Ok(Phq9Response { items })
    }

    pub fn items(&self) -> [u8; 9] {
        self.items
    }

    pub fn total(&self) -> u32 {
        self.items.iter().map(|&v| u32::from(v)).sum()
    }

    /// 1 when the total reaches the screening threshold.
    pub fn label(&self) -> usize {
        usize::from(self.total() >= PHQ9_THRESHOLD)
    }
}

pub fn label_from_phq9(response: &Phq9Response) -> usize {
    response.label()
}

/// Formal-elements rating dimensions, in storage order.
pub const FEATS_DIMENSIONS: [&str; 14] = [
    "color prominence",
    "appropriate color",
    "effort",
    "space use",
    "integration",
    "authenticity",
    "logic",
    "problem-solving",
    "development level",
    "detail and environment",
    "line quality",
    "people",
    "rotation",
    "continuous repetition",
];

/// Fourteen psychologist ratings in `[0, 5]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatsVector([f64; 14]);

impl TryFrom<Vec<f64>> for FeatsVector {
    type Error = EvalError;

    fn try_from(v: Vec<f64>) -> Result<Self, EvalError> {
        let arr: [f64; 14] = v.try_into().map_err(|v: Vec<f64>| EvalError::FeatsLength(v.len()))?;
        FeatsVector::new(arr)
    }
}

impl From<FeatsVector> for Vec<f64> {
    fn from(f: FeatsVector) -> Self {
        f.0.to_vec()
    }
}

impl FeatsVector {
    pub fn new(scores: [f64; 14]) -> Result<Self, EvalError> {
        if let Some((index, &value)) = scores
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=5.0).contains(*v)))
        {
            return Err(EvalError::FeatsOutOfRange { index, value });
        }
        Ok(FeatsVector(scores))
    }

    pub fn scores(&self) -> &[f64; 14] {
        &self.0
    }

    /// Scores divided by 5.
    pub fn scaled(&self) -> Vec<f64> {
        self.0.iter().map(|v| v / 5.0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgeBand {
    #[serde(rename = "0-20")]
    Under20,
    #[serde(rename = "20-40")]
    From20To40,
    #[serde(rename = "40-60")]
    From40To60,
    #[serde(rename = ">60")]
    Over60,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    pub age_band: AgeBand,
    pub gender: Gender,
}

/// One participant: sketch, questionnaire, optional ratings. The label is
/// derived from the questionnaire and checked on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RecordDoc")]
pub struct DatasetRecord {
    pub record_id: String,
    pub sketch: Sketch,
    pub phq9: Phq9Response,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feats: Option<FeatsVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demographics: Option<Demographics>,
    pub label: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordDoc {
    record_id: String,
    sketch: Sketch,
    phq9: Phq9Response,
    #[serde(default)]
    feats: Option<FeatsVector>,
    #[serde(default)]
    demographics: Option<Demographics>,
    #[serde(default)]
    label: Option<usize>,
}

impl TryFrom<RecordDoc> for DatasetRecord {
    type Error = EvalError;

    fn try_from(d: RecordDoc) -> Result<Self, EvalError> {
        let label = d.phq9.label();
        if d.label.is_some_and(|l| l != label) {
            return Err(EvalError::LabelMismatch(d.record_id));
        }
        Ok(DatasetRecord {
            record_id: d.record_id,
            sketch: d.sketch,
            phq9: d.phq9,
            feats: d.feats,
            demographics: d.demographics,
            label,
        })
    }
}

impl DatasetRecord {
    pub fn new(
        record_id: impl Into<String>,
        sketch: Sketch,
        phq9: Phq9Response,
        feats: Option<FeatsVector>,
        demographics: Option<Demographics>,
    ) -> Self {
        DatasetRecord {
            record_id: record_id.into(),
            sketch,
            label: phq9.label(),
            phq9,
            feats,
            demographics,
        }
    }
}

pub fn labels(records: &[DatasetRecord]) -> Vec<usize> {
    records.iter().map(|r| r.label).collect()
}

/// Newline-delimited JSON, one record per line.
pub fn write_corpus(records: &[DatasetRecord], mut out: impl Write) -> Result<(), EvalError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_corpus(text: &str) -> Result<Vec<DatasetRecord>, EvalError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(line);
        let rec: DatasetRecord = serde_path_to_error::deserialize(de).map_err(|e| EvalError::Schema {
            line: n + 1,
            message: format!("{}: {}", e.path(), e.inner()),
        })?;
        out.push(rec);
    }
    Ok(out)
}
