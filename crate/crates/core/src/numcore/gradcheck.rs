//! Central finite-difference gradient checking against the tape.

use super::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Magnitude below which gradients are compared absolutely rather than
/// relatively. Central differences at `h = 1e-5` carry roughly `1e-10`
/// truncation and round-off error, which would swamp a purely relative
/// comparison of near-zero components.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub numel: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Runs `loss_fn` once with backward to collect analytic gradients, then
/// perturbs every element of each parameter in `ids` by `±h`.
///
/// The store's grad buffers are left untouched.
pub fn check_params<F>(store: &mut ParamStore, ids: &[ParamId], h: f64, loss_fn: F) -> Result<Vec<GradCheck>>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let analytic = analytic_grads(store, ids, &loss_fn)?;
    let mut report = Vec::with_capacity(ids.len());
    for (&id, grad) in ids.iter().zip(&analytic) {
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for (k, &a) in grad.iter().enumerate() {
            let numeric = numeric_grad(store, id, k, h, &loss_fn)?;
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        report.push(GradCheck {
            name: store.name(id).to_string(),
            numel: store.get(id).len(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
        });
    }
    Ok(report)
}

/// Analytic gradient of `loss_fn` for each id; zero for parameters the loss
/// never touched.
pub fn analytic_grads<F>(store: &ParamStore, ids: &[ParamId], loss_fn: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    g.backward(loss)?;
    Ok(ids
        .iter()
        .map(|&id| {
            let v = g.param(store, id);
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; store.get(id).len()])
        })
        .collect())
}

fn numeric_grad<F>(store: &mut ParamStore, id: ParamId, k: usize, h: f64, loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let original = store.get(id).values()[k];
    store.get_mut(id).values_mut()[k] = original + h;
    let plus = eval(store, loss_fn);
    store.get_mut(id).values_mut()[k] = original - h;
    let minus = eval(store, loss_fn);
    store.get_mut(id).values_mut()[k] = original;
    Ok((plus? - minus?) / (2.0 * h))
}

fn eval<F>(store: &ParamStore, loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    Ok(g.scalar(loss))
}
