//! Central finite-difference checks of tape gradients.

use super::{ParamId, ParamSet, Tape, TensorError, Var};

/// Worst disagreement found by [`check_param_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps near-zero gradients
/// from producing huge ratios out of rounding noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compare `backward` against central differences for up to `per_param`
/// evenly spaced entries of every trainable parameter.
///
/// `build` must record a scalar loss on the tape it is given and be a pure
/// function of the parameter values.
pub fn check_param_gradients<F>(
    params: &ParamSet,
    build: F,
    per_param: usize,
    h: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: for<'a> Fn(&mut Tape<'a>) -> Result<Var, TensorError>,
{
    let eval = |p: &ParamSet| -> Result<f64, TensorError> {
        let mut tape = Tape::with_params(p);
        let loss = build(&mut tape)?;
        Ok(tape.value(loss).item())
    };
    let mut grads = params.zero_grads();
    {
        let mut tape = Tape::with_params(params);
        let loss = build(&mut tape)?;
        tape.backward_into(loss, &mut grads)?;
    }
    let mut work = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let ids: Vec<ParamId> = params.ids().filter(|&id| params.is_trainable(id)).collect();
    for id in ids {
        let n = params.get(id).numel();
        let step = (n / per_param.max(1)).max(1);
        for idx in (0..n).step_by(step).take(per_param) {
            let orig = params.get(id).data()[idx];
            work.get_mut(id).data_mut()[idx] = orig + h;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[idx] = orig - h;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(grads.get(id)[idx], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((params.name(id).to_string(), idx));
            }
        }
    }
    Ok(report)
}
