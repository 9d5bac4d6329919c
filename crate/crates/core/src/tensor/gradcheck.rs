use super::{NodeId, ParamSet, Tape, TensorError};

/// Worst relative error seen for one parameter.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub entries: usize,
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub per_param: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// Denominator floor so that near-zero gradients are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn evaluate<F>(forward: &F, params: &ParamSet) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<NodeId, TensorError>,
{
    let mut tape = Tape::new();
    let out = forward(&mut tape, params)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(TensorError::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.data()[0])
}

/// Compares tape gradients against central differences `(f(θ+h) − f(θ−h)) / 2h`
/// for every entry of every parameter, frozen or not.
pub fn finite_diff_check<F>(
    forward: F,
    params: &ParamSet,
    h: f64,
    tol: f64,
) -> Result<CheckReport, TensorError>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<NodeId, TensorError>,
{
    if !(h > 0.0) {
        return Err(TensorError::InvalidStep(h));
    }
    let first = evaluate(&forward, params)?;
    let second = evaluate(&forward, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministic { first, second });
    }

    let mut analytic = params.clone();
    analytic.zero_grads();
    analytic.set_frozen_where(|_| false);
    let mut tape = Tape::new();
    let loss = forward(&mut tape, &analytic)?;
    tape.backward(loss, &mut analytic)?;

    let mut probe = params.clone();
    let mut per_param = Vec::with_capacity(params.len());
    for idx in 0..params.len() {
        let entries = params.by_index(idx).value.len();
        let mut worst = 0.0f64;
        for e in 0..entries {
            let orig = params.by_index(idx).value.data()[e];
            probe.by_index_mut(idx).value.data_mut()[e] = orig + h;
            let plus = evaluate(&forward, &probe)?;
            probe.by_index_mut(idx).value.data_mut()[e] = orig - h;
            let minus = evaluate(&forward, &probe)?;
            probe.by_index_mut(idx).value.data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let tape_grad = analytic.by_index(idx).grad.data()[e];
            worst = worst.max(relative_error(tape_grad, numeric));
        }
        per_param.push(ParamCheck {
            name: params.by_index(idx).name.clone(),
            max_rel_error: worst,
            entries,
        });
    }
    let max_rel_error = per_param
        .iter()
        .map(|p| p.max_rel_error)
        .fold(0.0, f64::max);
    Ok(CheckReport {
        per_param,
        max_rel_error,
        tol,
    })
}
