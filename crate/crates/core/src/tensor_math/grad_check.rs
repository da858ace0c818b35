//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, NodeId};
use super::params::ParamStore;
use super::tensor::TensorError;

/// Denominator floor for the relative error, so that gradients that are
/// analytically zero compare on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(REL_ERR_FLOOR)
}

/// Compares backward-pass gradients of the scalar built by `build` with
/// central differences `(f(θ+ε) − f(θ−ε)) / 2ε`, element by element over
/// every parameter in `store`.
///
/// `build` is evaluated twice at the unperturbed point; differing losses are
/// reported as [`TensorError::NonDeterministic`].
pub fn grad_check<F>(
    store: &ParamStore,
    epsilon: f64,
    build: F,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId, TensorError>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let eval = |s: &ParamStore| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let loss = build(&mut g, s)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let first = g.value(loss).item();
    let second = eval(store)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministic { first, second });
    }
    g.backward(loss)?;
    let analytic = g.param_grads(store);

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    for id in store.ids() {
        for k in 0..store.get(id).len() {
            let orig = store.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = orig + epsilon;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = orig - epsilon;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(analytic[id.index()].data()[k], numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((store.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}
