use serde::{Deserialize, Serialize};

use super::{Real, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment buffers, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| {
                let n = p.shape().numel();
                (vec![T::zero(); n], vec![T::zero(); n])
            })
            .unzip();
        AdamState { config, t: 0, m, v }
    }
}

/// One bias-corrected Adam update of every parameter in `params`.
///
/// `grads[i]` is the gradient of `params[i]`. The learning rate is taken
/// from `state.config` so schedules can adjust it between steps.
pub fn adam_step<T: Real>(params: &mut [&mut Tensor<T>], grads: &[&[T]], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::Shape {
            op: "adam_step",
            detail: format!("{} params, {} grads, {} moment buffers", params.len(), grads.len(), state.m.len()),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let n = p.shape().numel();
        if g.len() != n || state.m[i].len() != n || state.v[i].len() != n {
            return Err(TensorError::Shape {
                op: "adam_step",
                detail: format!("parameter {i} has {n} values, gradient {}, moments {}", g.len(), state.m[i].len()),
            });
        }
    }
    state.t += 1;
    let c = state.config;
    let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
    let bias1 = T::from_f64(1.0 - c.beta1.powi(state.t as i32));
    let bias2 = T::from_f64(1.0 - c.beta2.powi(state.t as i32));
    let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.eps));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g[j];
            m[j] = b1 * m[j] + (T::one() - b1) * gj;
            v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
