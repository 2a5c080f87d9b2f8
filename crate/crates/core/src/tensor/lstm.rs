use super::{shape_err, ParamId, ParamSet, Tape, Tensor, TensorError, Var};
use rand::Rng;

/// Parameter handles of one LSTM layer. Gate blocks are stacked in the order
/// input, forget, cell candidate, output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub hidden: usize,
}

/// Register `layers` stacked LSTM layers named `{prefix}{l}.{w_ih,w_hh,b_ih,b_hh}`.
///
/// Weights are uniform in `±sqrt(1/fan_in)`; the forget-gate half of `b_ih`
/// starts at 1.0.
pub fn init_lstm(
    params: &mut ParamSet,
    prefix: &str,
    input: usize,
    hidden: usize,
    layers: usize,
    rng: &mut impl Rng,
) -> Vec<LstmLayer> {
    (0..layers)
        .map(|l| {
            let d_in = if l == 0 { input } else { hidden };
            let b_in = (1.0 / d_in as f64).sqrt();
            let b_h = (1.0 / hidden as f64).sqrt();
            let w_ih = params.add(format!("{prefix}{l}.w_ih"), Tensor::uniform(&[4 * hidden, d_in], b_in, rng));
            let w_hh = params.add(format!("{prefix}{l}.w_hh"), Tensor::uniform(&[4 * hidden, hidden], b_h, rng));
            let mut bias = Tensor::uniform(&[4 * hidden], b_in, rng);
            bias.data_mut()[hidden..2 * hidden].fill(1.0);
            let b_ih = params.add(format!("{prefix}{l}.b_ih"), bias);
            let b_hh = params.add(format!("{prefix}{l}.b_hh"), Tensor::zeros(&[4 * hidden]));
            LstmLayer {
                w_ih,
                w_hh,
                b_ih,
                b_hh,
                hidden,
            }
        })
        .collect()
}

/// Look up layers registered by [`init_lstm`].
pub fn resolve_lstm(params: &ParamSet, prefix: &str, layers: usize) -> Result<Vec<LstmLayer>, TensorError> {
    let get = |name: String| {
        params
            .id(&name)
            .ok_or_else(|| TensorError::InvalidConfig(format!("missing parameter `{name}`")))
    };
    (0..layers)
        .map(|l| {
            let w_hh = get(format!("{prefix}{l}.w_hh"))?;
            let hidden = params.get(w_hh).shape()[1];
            Ok(LstmLayer {
                w_ih: get(format!("{prefix}{l}.w_ih"))?,
                w_hh,
                b_ih: get(format!("{prefix}{l}.b_ih"))?,
                b_hh: get(format!("{prefix}{l}.b_hh"))?,
                hidden,
            })
        })
        .collect()
}

/// Run stacked LSTM layers over `inputs` (`[T, D]`) from zero initial state,
/// returning the top layer's hidden sequence `[T, H]`.
pub fn lstm_forward(tape: &mut Tape<'_>, inputs: Var, layers: &[LstmLayer]) -> Result<Var, TensorError> {
    let shape = tape.shape(inputs).to_vec();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(shape_err("lstm", format!("inputs must be [T, D] with T >= 1, got {shape:?}")));
    }
    if layers.is_empty() {
        return Err(shape_err("lstm", "no layers"));
    }
    let steps = shape[0];
    let mut sequence: Vec<Var> = (0..steps)
        .map(|t| tape.row(inputs, t))
        .collect::<Result<_, _>>()?;
    for layer in layers {
        let hsz = layer.hidden;
        let w_ih = tape.param(layer.w_ih);
        let w_hh = tape.param(layer.w_hh);
        let b_ih = tape.param(layer.b_ih);
        let b_hh = tape.param(layer.b_hh);
        let mut h = tape.constant(Tensor::zeros(&[hsz]));
        let mut c = tape.constant(Tensor::zeros(&[hsz]));
        let mut outputs = Vec::with_capacity(steps);
        for &x in &sequence {
            let gx = tape.linear(x, w_ih, Some(b_ih))?;
            let gh = tape.linear(h, w_hh, Some(b_hh))?;
            let gates = tape.add(gx, gh)?;
            let i_pre = tape.slice(gates, 0, hsz)?;
            let f_pre = tape.slice(gates, hsz, hsz)?;
            let g_pre = tape.slice(gates, 2 * hsz, hsz)?;
            let o_pre = tape.slice(gates, 3 * hsz, hsz)?;
            let i = tape.sigmoid(i_pre);
            let f = tape.sigmoid(f_pre);
            let g = tape.tanh(g_pre);
            let o = tape.sigmoid(o_pre);
            let keep = tape.mul(f, c)?;
            let write = tape.mul(i, g)?;
            c = tape.add(keep, write)?;
            let squashed = tape.tanh(c);
            h = tape.mul(o, squashed)?;
            outputs.push(h);
        }
        sequence = outputs;
    }
    tape.stack(&sequence)
}
