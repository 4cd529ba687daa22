//! Central-difference gradient checking against the reverse sweep.

use crate::diff::graph::{Graph, NodeId};
use crate::diff::store::{ParamId, ParameterStore};
use crate::error::DiffError;

/// Gradients smaller than this are compared on an absolute scale, since
/// central-difference roundoff at `h = 1e−5` is around `1e−11·|L|`.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// max |analytic − cd| / max(|analytic|, |cd|, 1e−6) over all entries.
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

/// Compares reverse-mode gradients of `f` with central differences of step `h`.
///
/// `f` must build the same tape for every call. Perturbed evaluations replay
/// the unperturbed `stop_gradient` values, so detached inputs stay constant
/// exactly as they do for the reverse sweep. Gradients already held by
/// `store` are left as they were.
pub fn finite_diff_check<F>(store: &mut ParameterStore, h: f64, f: F) -> Result<FdReport, DiffError>
where
    F: Fn(&mut Graph, &ParameterStore) -> Result<NodeId, DiffError>,
{
    let saved: Vec<Vec<f64>> = store.ids().map(|id| store.grad(id).to_vec()).collect();
    store.zero_grad();

    let mut graph = Graph::new();
    let loss = f(&mut graph, store)?;
    graph.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = store.ids().map(|id| store.grad(id).to_vec()).collect();
    let frozen = graph.take_detached();

    let eval = |store: &ParameterStore| -> Result<f64, DiffError> {
        let mut g = Graph::replaying(frozen.clone());
        let l = f(&mut g, store)?;
        Ok(g.scalar(l))
    };

    let ids: Vec<ParamId> = store.ids().collect();
    let mut numeric = Vec::with_capacity(ids.len());
    let mut max_rel_error = 0.0_f64;
    let mut worst = None;
    for (k, &id) in ids.iter().enumerate() {
        let len = store.value(id).len();
        let mut row = Vec::with_capacity(len);
        for i in 0..len {
            let original = store.value(id).values()[i];
            store.value_mut(id).values_mut()[i] = original + h;
            let plus = eval(store)?;
            store.value_mut(id).values_mut()[i] = original - h;
            let minus = eval(store)?;
            store.value_mut(id).values_mut()[i] = original;
            let cd = (plus - minus) / (2.0 * h);
            let a = analytic[k][i];
            let rel = (a - cd).abs() / a.abs().max(cd.abs()).max(REL_FLOOR);
            if rel > max_rel_error {
                max_rel_error = rel;
                worst = Some((store.name(id).to_string(), i));
            }
            row.push(cd);
        }
        numeric.push(row);
    }

    for (id, g) in ids.iter().zip(&saved) {
        store.set_grad(*id, g);
    }
    Ok(FdReport {
        max_rel_error,
        worst,
        analytic,
        numeric,
    })
}
