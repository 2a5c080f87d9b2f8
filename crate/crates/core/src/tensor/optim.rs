use super::{shape_err, ParamGrads, ParamSet, TensorError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TensorError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !beta_ok(self.beta1) || !beta_ok(self.beta2) {
            return Err(TensorError::InvalidConfig(format!(
                "betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(TensorError::InvalidConfig("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moment buffers plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero moments matching `params`.
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.ids().map(|id| vec![0.0; params.get(id).numel()]).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of every trainable parameter.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &ParamGrads,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<(), TensorError> {
    config.validate()?;
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(shape_err("adam_step", "parameter, gradient and state counts differ"));
    }
    for id in params.ids() {
        let n = params.get(id).numel();
        if grads.get(id).len() != n || state.m[id.index()].len() != n {
            return Err(shape_err(
                "adam_step",
                format!("buffer length mismatch for `{}`", params.name(id)),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for id in params.ids() {
        if !params.is_trainable(id) {
            continue;
        }
        let g = grads.get(id);
        let m = &mut state.m[id.index()];
        let v = &mut state.v[id.index()];
        let p = params.get_mut(id).data_mut();
        for i in 0..p.len() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::Tensor;
    use super::*;

    fn single(value: f64) -> (ParamSet, super::super::ParamId) {
        let mut p = ParamSet::new();
        let id = p.add("w", Tensor::vector(vec![value]));
        (p, id)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut p, id) = single(0.7);
        let g = p.zero_grads();
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p.get(id).data(), &[0.7]);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        // t = 1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let (mut p, id) = single(1.0);
        let mut g = p.zero_grads();
        g.get_mut(id)[0] = 0.5;
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &g, &mut s, &cfg).unwrap();
        let expected = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((p.get(id).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn minimizes_square() {
        let (mut p, id) = single(1.0);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        for _ in 0..100 {
            let mut g = p.zero_grads();
            g.get_mut(id)[0] = 2.0 * p.get(id).data()[0];
            adam_step(&mut p, &g, &mut s, &cfg).unwrap();
        }
        assert!(p.get(id).data()[0].abs() < 0.1, "{}", p.get(id).data()[0]);
    }

    #[test]
    fn frozen_and_mismatched() {
        let (mut p, id) = single(1.0);
        p.set_trainable(id, false);
        let mut g = p.zero_grads();
        g.get_mut(id)[0] = 3.0;
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p.get(id).data(), &[1.0]);

        let (other, _) = single(2.0);
        let mut bigger = other.clone();
        bigger.add("x", Tensor::zeros(&[3]));
        let bad = bigger.zero_grads();
        assert!(adam_step(&mut p, &bad, &mut s, &AdamConfig::default()).is_err());
        let bad_cfg = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(adam_step(&mut p, &g, &mut s, &bad_cfg).is_err());
    }
}
