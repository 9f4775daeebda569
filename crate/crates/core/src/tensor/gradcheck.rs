//! Central finite-difference audits of reverse-mode gradients.
//!
//! The numerical side only ever evaluates forward values, so it is an
//! independent check on every backward rule.

use super::{ParamStore, Tape, Tensor, TensorError, Var};

/// Denominator floor so that near-zero gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

impl GradReport {
    fn new() -> Self {
        Self {
            checked: 0,
            max_rel_error: 0.0,
            worst: String::new(),
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, what: impl FnOnce() -> String) {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        self.checked += 1;
        if err > self.max_rel_error || !err.is_finite() {
            self.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
            self.worst = format!("{} (analytic {analytic:e}, numeric {numeric:e})", what());
        }
    }
}

/// Evenly spaced entry indices, at most `limit` of them.
fn sample(n: usize, limit: usize) -> Vec<usize> {
    if n <= limit {
        return (0..n).collect();
    }
    (0..limit).map(|i| i * n / limit).collect()
}

/// Checks d f / d inputs for a function of leaf tensors.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradReport, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out, &mut ParamStore::new())?;
    let mut report = GradReport::new();
    let mut xs = inputs.to_vec();
    for (a, &v) in vars.iter().enumerate() {
        let g = grads.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[a].len()]);
        for i in 0..inputs[a].len() {
            let x0 = inputs[a].data()[i];
            xs[a].data_mut()[i] = x0 + h;
            let up = eval(&xs)?;
            xs[a].data_mut()[i] = x0 - h;
            let down = eval(&xs)?;
            xs[a].data_mut()[i] = x0;
            report.record(g[i], (up - down) / (2.0 * h), || format!("input {a}[{i}]"));
        }
    }
    Ok(report)
}

/// Checks d f / d parameters, probing at most `per_param` entries of each
/// parameter tensor.
pub fn check_params<F, E>(
    store: &mut ParamStore<f64>,
    h: f64,
    per_param: usize,
    f: F,
) -> Result<GradReport, E>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var, E>,
    E: From<TensorError>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    tape.backward(out, store)?;
    let eval = |s: &ParamStore<f64>| -> Result<f64, E> {
        let mut tape = Tape::new();
        let out = f(&mut tape, s)?;
        Ok(tape.value(out).item())
    };
    let mut report = GradReport::new();
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        for i in sample(store.value(id).len(), per_param) {
            let analytic = store.grad(id).data()[i];
            let x0 = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = x0 + h;
            let up = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = x0 - h;
            let down = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = x0;
            let name = &store.get(id).name;
            report.record(analytic, (up - down) / (2.0 * h), || format!("{name}[{i}]"));
        }
    }
    Ok(report)
}
