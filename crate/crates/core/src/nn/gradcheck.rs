//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Below this magnitude a gradient is compared absolutely: central
/// differences at `eps = 1e-5` carry roundoff near `1e-11` for O(1) losses.
pub const ABS_FLOOR: f64 = 1e-5;

/// `|a - n| / max(ABS_FLOOR, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(ABS_FLOOR)
}

fn scalar_output(g: &Graph, out: Var) -> Result<f64> {
    let t = g.value(out);
    if t.len() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar output, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.item())
}

/// Compares the analytic gradient of `op` w.r.t. every entry of `inputs`
/// against central differences and returns the maximum relative error.
pub fn grad_check<F>(op: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if inputs.iter().any(|t| !t.is_finite()) {
        return Err(Error::Contract("grad_check inputs must be finite".into()));
    }
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = op(&mut g, &vars)?;
        scalar_output(&g, out)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = op(&mut g, &vars)?;
    scalar_output(&g, out)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; g.value(v).len()])
        })
        .collect();

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (t, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = probe[t].data()[i];
            probe[t].data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe[t].data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

/// Same check for a model objective, perturbing stored parameters in place.
/// `selection` limits the parameters probed (all when `None`).
pub fn grad_check_params<F>(
    op: F,
    store: &mut ParamStore,
    selection: Option<&[ParamId]>,
    eps: f64,
) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = op(&mut g, store)?;
    scalar_output(&g, out)?;
    g.backward(out)?;
    let ids: Vec<ParamId> = match selection {
        Some(s) => s.to_vec(),
        None => store.ids().collect(),
    };
    let mut analytic = Vec::with_capacity(ids.len());
    for &id in &ids {
        let n = store.get(id).len();
        let grad = g
            .param_vars()
            .find(|&(pid, _)| pid == id)
            .and_then(|(_, v)| g.grad(v).map(<[f64]>::to_vec))
            .unwrap_or_else(|| vec![0.0; n]);
        analytic.push(grad);
    }
    drop(g);

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = op(&mut g, store)?;
        scalar_output(&g, out)
    };
    let mut worst = 0.0f64;
    for (&id, grads) in ids.iter().zip(&analytic) {
        for (i, &a) in grads.iter().enumerate() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + eps;
            let up = eval(store);
            store.get_mut(id).data_mut()[i] = orig - eps;
            let down = eval(store);
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (up? - down?) / (2.0 * eps);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}
