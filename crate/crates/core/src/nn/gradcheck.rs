//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, NodeId};
use super::param::ParamStore;
use crate::error::{Error, Result};

/// Magnitude below which both gradients are compared absolutely.
pub const ABSOLUTE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_error: f64,
    /// Parameter name and flat index of the worst entry, if any were checked.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Error metric between an analytic and a numeric derivative.
pub fn gradient_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < ABSOLUTE_FLOOR {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares the tape gradient of `loss_fn` against
/// `(L(θ+δ) − L(θ−δ)) / 2δ` for every trainable parameter entry.
///
/// `loss_fn` must be deterministic: use eval mode or a fixed-seed graph with
/// dropout disabled. Existing gradients in `store` are cleared.
pub fn check_gradients<F>(store: &mut ParamStore, mut loss_fn: F, delta: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(Graph, NodeId)>,
{
    if delta <= 0.0 {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    store.zero_grad();
    let (graph, loss) = loss_fn(store)?;
    graph.backward(loss, store)?;
    drop(graph);

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let (g, l) = loss_fn(store)?;
        Ok(g.value(l).data()[0])
    };

    let mut report = GradCheckReport {
        max_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if !store.get(id).trainable {
            continue;
        }
        for i in 0..store.get(id).value.len() {
            let original = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = original + delta;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = original - delta;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * delta);
            let analytic = store.get(id).gradient.data()[i];
            let err = gradient_error(analytic, numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_error {
                report.max_error = err;
                report.worst = Some((store.get(id).name.clone(), i));
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
