use crate::tensor_math::{ParamStore, Tensor};

use super::TrainError;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        AdamState {
            m: store.zeros_like(),
            v: store.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update. Any non-finite gradient aborts before a
/// single parameter is touched.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    assert_eq!(
        grads.len(),
        store.len(),
        "gradients must align with parameters"
    );
    for (id, g) in store.ids().zip(grads) {
        if let Some(k) = g.data().iter().position(|x| !x.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                param: store.name(id).to_string(),
                index: k,
                value: g.data()[k],
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((param, g), (m, v)) in store
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let theta = param.value.data_mut();
        for k in 0..theta.len() {
            let gk = g.data()[k];
            let mk = &mut m.data_mut()[k];
            let vk = &mut v.data_mut()[k];
            *mk = b1 * *mk + (1.0 - b1) * gk;
            *vk = b2 * *vk + (1.0 - b2) * gk * gk;
            let m_hat = *mk / c1;
            let v_hat = *vk / c2;
            theta[k] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
