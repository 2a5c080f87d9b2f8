use super::TensorError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalLossConfig {
    pub gamma: f64,
    /// Optional class weight: `alpha` for class 1, `1 - alpha` for every other class.
    #[serde(default)]
    pub alpha: Option<f64>,
}

impl Default for FocalLossConfig {
    fn default() -> Self {
        FocalLossConfig {
            gamma: 2.0,
            alpha: None,
        }
    }
}

impl FocalLossConfig {
    pub fn new(gamma: f64) -> Result<Self, TensorError> {
        let cfg = FocalLossConfig { gamma, alpha: None };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(TensorError::InvalidConfig(format!(
                "focal gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if let Some(a) = self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(TensorError::InvalidConfig(format!(
                    "focal alpha must lie in [0, 1], got {a}"
                )));
            }
        }
        Ok(())
    }

    fn weight(&self, label: usize) -> f64 {
        match self.alpha {
            None => 1.0,
            Some(a) if label == 1 => a,
            Some(a) => 1.0 - a,
        }
    }
}

/// Numerically stable log-softmax.
///
/// The largest logit contributes exactly 1 to the normalizer, so the log-sum is
/// taken with `ln_1p` over the remaining terms.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let (arg, max) = logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, &v)| (v - max).exp())
        .sum();
    let log_norm = rest.ln_1p();
    logits.iter().map(|&v| (v - max) - log_norm).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

fn check_label(label: usize, classes: usize) -> Result<(), TensorError> {
    if classes < 2 {
        return Err(super::shape_err("loss", format!("need at least 2 classes, got {classes}")));
    }
    if label >= classes {
        return Err(TensorError::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// `-log p_label` and its gradient with respect to the logits.
pub(crate) fn cross_entropy_row(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>), TensorError> {
    check_label(label, logits.len())?;
    let log_p = log_softmax(logits);
    let grad = log_p
        .iter()
        .enumerate()
        .map(|(k, &lp)| lp.exp() - if k == label { 1.0 } else { 0.0 })
        .collect();
    Ok((-log_p[label], grad))
}

/// `-(1 - p_t)^gamma · log p_t` for one logit row.
pub fn focal_loss_value(logits: &[f64], label: usize, config: &FocalLossConfig) -> Result<f64, TensorError> {
    focal_row(logits, label, config).map(|(loss, _)| loss)
}

pub(crate) fn focal_row(
    logits: &[f64],
    label: usize,
    config: &FocalLossConfig,
) -> Result<(f64, Vec<f64>), TensorError> {
    check_label(label, logits.len())?;
    config.validate()?;
    let gamma = config.gamma;
    let weight = config.weight(label);
    let log_p = log_softmax(logits);
    let log_pt = log_p[label];
    let pt = log_pt.exp();
    let one_minus = -log_pt.exp_m1();
    let modulating = one_minus.powf(gamma);
    let loss = -weight * modulating * log_pt;

    // dL/d(log p_t); the second term vanishes at gamma = 0 and as p_t -> 1.
    let mut d_log_pt = -modulating;
    if gamma != 0.0 && one_minus > 0.0 {
        d_log_pt += gamma * one_minus.powf(gamma - 1.0) * pt * log_pt;
    }
    d_log_pt *= weight;
    let grad = log_p
        .iter()
        .enumerate()
        .map(|(k, &lp)| d_log_pt * (if k == label { 1.0 } else { 0.0 } - lp.exp()))
        .collect();
    Ok((loss, grad))
}
