//! Classifiers over questionnaire-style feature vectors.

use super::EvalError;
use crate::tensor::{adam_step, AdamConfig, AdamState, ParamId, ParamSet, Tape, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            learning_rate: 0.1,
            iterations: 500,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogReg {
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogReg {
    pub fn zeros(dim: usize) -> Self {
        LogReg {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        let z: f64 = self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias;
        sigmoid(z)
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        usize::from(self.probability(x) > 0.5)
    }

    /// Mean binary cross-entropy and its gradient `(d/dw, d/db)`.
    pub fn loss_and_grad(&self, xs: &[Vec<f64>], ys: &[usize]) -> (f64, Vec<f64>, f64) {
        let n = xs.len() as f64;
        let mut loss = 0.0;
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let p = self.probability(x);
            let t = y as f64;
            loss -= t * p.max(1e-300).ln() + (1.0 - t) * (1.0 - p).max(1e-300).ln();
            let d = p - t;
            for (g, v) in gw.iter_mut().zip(x) {
                *g += d * v;
            }
            gb += d;
        }
        gw.iter_mut().for_each(|g| *g /= n);
        (loss / n, gw, gb / n)
    }
}

/// Full-batch gradient descent from a small seeded initialization.
pub fn fit_logreg(xs: &[Vec<f64>], ys: &[usize], cfg: &LogRegConfig) -> Result<LogReg, EvalError> {
    let dim = check_dataset(xs, ys)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = LogReg {
        weights: (0..dim).map(|_| rng.random_range(-0.01..0.01)).collect(),
        bias: 0.0,
    };
    for _ in 0..cfg.iterations {
        let (_, gw, gb) = model.loss_and_grad(xs, ys);
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= cfg.learning_rate * g;
        }
        model.bias -= cfg.learning_rate * gb;
    }
    Ok(model)
}

fn check_dataset(xs: &[Vec<f64>], ys: &[usize]) -> Result<usize, EvalError> {
    if xs.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    let dim = xs[0].len();
    if let Some(bad) = xs.iter().find(|x| x.len() != dim) {
        return Err(EvalError::LengthMismatch(bad.len(), dim));
    }
    Ok(dim)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: 32,
            epochs: 500,
            adam: AdamConfig {
                learning_rate: 0.01,
                ..AdamConfig::default()
            },
            seed: 7,
        }
    }
}

/// One hidden ReLU layer and a two-way softmax output.
#[derive(Debug, Clone)]
pub struct Mlp {
    params: ParamSet,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Mlp {
    pub fn new(input: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let w1 = params.add("mlp.0.weight", Tensor::fan_in_uniform(&[hidden, input], input, &mut rng));
        let b1 = params.add("mlp.0.bias", Tensor::fan_in_uniform(&[hidden], input, &mut rng));
        let w2 = params.add("mlp.1.weight", Tensor::fan_in_uniform(&[2, hidden], hidden, &mut rng));
        let b2 = params.add("mlp.1.bias", Tensor::fan_in_uniform(&[2], hidden, &mut rng));
        Mlp { params, w1, b1, w2, b2 }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn output_layer(&self) -> (ParamId, ParamId) {
        (self.w2, self.b2)
    }

    fn batch(xs: &[Vec<f64>]) -> Result<Tensor, TensorError> {
        let dim = xs.first().map_or(0, Vec::len);
        Tensor::new(vec![xs.len(), dim], xs.concat())
    }

    fn graph<'p>(&'p self, tape: &mut Tape<'p>, xs: &[Vec<f64>]) -> Result<crate::tensor::Var, TensorError> {
        let x = tape.constant(Self::batch(xs)?);
        let (w1, b1, w2, b2) = (tape.param(self.w1), tape.param(self.b1), tape.param(self.w2), tape.param(self.b2));
        let h = tape.linear(x, w1, Some(b1))?;
        let h = tape.relu(h);
        tape.linear(h, w2, Some(b2))
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, xs: &[Vec<f64>], ys: &[usize]) -> Result<f64, EvalError> {
        check_dataset(xs, ys)?;
        let mut tape = Tape::with_params(&self.params);
        let logits = self.graph(&mut tape, xs).map_err(model_err)?;
        let loss = tape.softmax_cross_entropy(logits, ys).map_err(model_err)?;
        Ok(tape.value(loss).item())
    }

    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<Vec<usize>, EvalError> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::with_params(&self.params);
        let logits = self.graph(&mut tape, xs).map_err(model_err)?;
        Ok(tape
            .value(logits)
            .data()
            .chunks(2)
            .map(|l| usize::from(l[1] > l[0]))
            .collect())
    }

    /// One full-batch Adam step; returns the loss before the update.
    fn step(&mut self, xs: &[Vec<f64>], ys: &[usize], state: &mut AdamState, adam: &AdamConfig) -> Result<f64, TensorError> {
        let mut grads = self.params.zero_grads();
        let value = {
            let mut tape = Tape::with_params(&self.params);
            let logits = self.graph(&mut tape, xs)?;
            let loss = tape.softmax_cross_entropy(logits, ys)?;
            tape.backward_into(loss, &mut grads)?;
            tape.value(loss).item()
        };
        adam_step(&mut self.params, &grads, state, adam)?;
        Ok(value)
    }
}

fn model_err(e: TensorError) -> EvalError {
    EvalError::Model(e.into())
}

/// Full-batch Adam for `cfg.epochs` steps.
pub fn fit_mlp(xs: &[Vec<f64>], ys: &[usize], cfg: &MlpConfig) -> Result<Mlp, EvalError> {
    let dim = check_dataset(xs, ys)?;
    let mut mlp = Mlp::new(dim, cfg.hidden, cfg.seed);
    let mut state = AdamState::new(&mlp.params);
    for _ in 0..cfg.epochs {
        mlp.step(xs, ys, &mut state, &cfg.adam).map_err(model_err)?;
    }
    Ok(mlp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::accuracy;

    fn toy() -> (Vec<Vec<f64>>, Vec<usize>) {
        let xs: Vec<Vec<f64>> = [0.05, 0.1, 0.2, 0.3, 0.7, 0.8, 0.9, 0.95].iter().map(|&v| vec![v]).collect();
        (xs, vec![0, 0, 0, 0, 1, 1, 1, 1])
    }

    #[test]
    fn zero_weights_give_half() {
        let m = LogReg::zeros(14);
        assert_eq!(m.probability(&[0.3; 14]), 0.5);
        assert_eq!(m.probability(&[5.0; 14]), 0.5);
    }

    #[test]
    fn separable_toy_fits() {
        let (xs, ys) = toy();
        let cfg = LogRegConfig {
            iterations: 5000,
            learning_rate: 1.0,
            ..LogRegConfig::default()
        };
        let m = fit_logreg(&xs, &ys, &cfg).unwrap();
        let preds: Vec<usize> = xs.iter().map(|x| m.predict(x)).collect();
        assert_eq!(accuracy(&preds, &ys).unwrap(), 1.0);
        assert_eq!(m, fit_logreg(&xs, &ys, &cfg).unwrap());
    }

    #[test]
    fn default_schedule_fits_toy() {
        let (xs, ys) = toy();
        let m = fit_logreg(&xs, &ys, &LogRegConfig::default()).unwrap();
        let (l0, _, _) = LogReg::zeros(1).loss_and_grad(&xs, &ys);
        let (l1, _, _) = m.loss_and_grad(&xs, &ys);
        assert!(l1 < l0);
    }

    #[test]
    fn logreg_gradient_matches_finite_differences() {
        let xs = vec![vec![0.2, 0.9, 0.4], vec![0.7, 0.1, 0.3], vec![0.5, 0.5, 0.95], vec![0.0, 0.3, 0.6]];
        let ys = vec![1, 0, 1, 0];
        let m = LogReg {
            weights: vec![0.4, -1.2, 0.7],
            bias: -0.3,
        };
        let (_, gw, gb) = m.loss_and_grad(&xs, &ys);
        let h = 1e-6;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        for i in 0..3 {
            let mut p = m.clone();
            p.weights[i] += h;
            let mut q = m.clone();
            q.weights[i] -= h;
            let num = (p.loss_and_grad(&xs, &ys).0 - q.loss_and_grad(&xs, &ys).0) / (2.0 * h);
            assert!(rel(gw[i], num) < 1e-4, "w{i}: {} vs {num}", gw[i]);
        }
        let mut p = m.clone();
        p.bias += h;
        let mut q = m.clone();
        q.bias -= h;
        let num = (p.loss_and_grad(&xs, &ys).0 - q.loss_and_grad(&xs, &ys).0) / (2.0 * h);
        assert!(rel(gb, num) < 1e-4);
    }

    #[test]
    fn empty_inputs() {
        assert!(matches!(fit_logreg(&[], &[], &LogRegConfig::default()), Err(EvalError::EmptyDataset)));
        assert!(matches!(fit_mlp(&[], &[], &MlpConfig::default()), Err(EvalError::EmptyDataset)));
    }

    #[test]
    fn zero_output_layer_loss_is_ln2() {
        let mut mlp = Mlp::new(3, 32, 1);
        let (w, b) = mlp.output_layer();
        mlp.params_mut().get_mut(w).data_mut().fill(0.0);
        mlp.params_mut().get_mut(b).data_mut().fill(0.0);
        let xs = vec![vec![0.1, 0.2, 0.3], vec![1.0, 0.0, 0.5]];
        assert_eq!(mlp.loss(&xs, &[0, 1]).unwrap(), std::f64::consts::LN_2);
    }

    #[test]
    fn xor_within_2000_epochs() {
        let xs = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let ys = vec![0, 1, 1, 0];
        let cfg = MlpConfig {
            epochs: 2000,
            ..MlpConfig::default()
        };
        let mlp = fit_mlp(&xs, &ys, &cfg).unwrap();
        assert_eq!(mlp.predict(&xs).unwrap(), ys);
        let again = fit_mlp(&xs, &ys, &cfg).unwrap();
        assert_eq!(mlp.loss(&xs, &ys).unwrap(), again.loss(&xs, &ys).unwrap());
    }
}
