use super::{expect_steps, lookup, EncoderConfig, Fusion, VisualFeature, LSTM_LAYERS};
use crate::sketch::SUB_SKETCH_COUNT;
use crate::tensor::{init_lstm, lstm_forward, resolve_lstm, shape_err, LstmLayer, ParamId, ParamSet, Tape, Tensor, TensorError, Var};
use rand::Rng;

/// Per-timestep temporal features, shape `(12, temporal_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalFeature {
    steps: Tensor,
    fusion: Fusion,
}

impl TemporalFeature {
    pub fn new(steps: Tensor, fusion: Fusion) -> Result<Self, TensorError> {
        match steps.shape() {
            [SUB_SKETCH_COUNT, _] => Ok(TemporalFeature { steps, fusion }),
            s => Err(shape_err("temporal_feature", format!("expected (12, D), got {s:?}"))),
        }
    }

    pub fn steps(&self) -> &Tensor {
        &self.steps
    }

    pub fn step(&self, t: usize) -> &[f64] {
        let d = self.steps.shape()[1];
        &self.steps.data()[t * d..(t + 1) * d]
    }

    /// The vector handed to the decoder: the final timestep, or the mean over
    /// timesteps when configured.
    pub fn fusion_vector(&self) -> Vec<f64> {
        match self.fusion {
            Fusion::Last => self.step(SUB_SKETCH_COUNT - 1).to_vec(),
            Fusion::Mean => {
                let d = self.steps.shape()[1];
                let mut out = vec![0.0; d];
                for t in 0..SUB_SKETCH_COUNT {
                    out.iter_mut().zip(self.step(t)).for_each(|(o, v)| *o += v);
                }
                out.iter_mut().for_each(|o| *o /= SUB_SKETCH_COUNT as f64);
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalParams {
    pub lstm: Vec<LstmLayer>,
    pub proj_weight: ParamId,
    pub proj_bias: ParamId,
}

impl TemporalParams {
    pub fn init(params: &mut ParamSet, cfg: &EncoderConfig, rng: &mut impl Rng) -> Self {
        let lstm = init_lstm(params, "temporal.lstm", cfg.flatten_dim, cfg.lstm_hidden, LSTM_LAYERS, rng);
        let h = cfg.lstm_hidden;
        TemporalParams {
            lstm,
            proj_weight: params.add(
                "temporal.proj.weight",
                Tensor::fan_in_uniform(&[cfg.temporal_dim, h], h, rng),
            ),
            proj_bias: params.add("temporal.proj.bias", Tensor::fan_in_uniform(&[cfg.temporal_dim], h, rng)),
        }
    }

    pub fn resolve(params: &ParamSet) -> Result<Self, TensorError> {
        Ok(TemporalParams {
            lstm: resolve_lstm(params, "temporal.lstm", LSTM_LAYERS)?,
            proj_weight: lookup(params, "temporal.proj.weight")?,
            proj_bias: lookup(params, "temporal.proj.bias")?,
        })
    }
}

/// Record the two-layer LSTM and per-step projection for a `(12, F)`
/// sequence of flattened visual features, returning `(12, temporal_dim)`.
pub fn temporal_graph(tape: &mut Tape<'_>, tp: &TemporalParams, sequence: Var) -> Result<Var, TensorError> {
    expect_steps(tape.shape(sequence).first().copied().unwrap_or(0))?;
    let hidden = lstm_forward(tape, sequence, &tp.lstm)?;
    let (w, b) = (tape.param(tp.proj_weight), tape.param(tp.proj_bias));
    tape.linear(hidden, w, Some(b))
}

pub fn encode_sequence(
    features: &[VisualFeature],
    params: &ParamSet,
    tp: &TemporalParams,
    fusion: Fusion,
) -> Result<TemporalFeature, TensorError> {
    expect_steps(features.len())?;
    let dim = features[0].flatten().len();
    if features.iter().any(|f| f.flatten().len() != dim) {
        return Err(shape_err("encode_sequence", "timesteps differ in flatten dimension"));
    }
    let data = features.iter().flat_map(|f| f.flatten().iter().copied()).collect();
    let mut tape = Tape::with_params(params);
    let seq = tape.constant(Tensor::new(vec![SUB_SKETCH_COUNT, dim], data)?);
    let y = temporal_graph(&mut tape, tp, seq)?;
    TemporalFeature::new(tape.value(y).clone(), fusion)
}
