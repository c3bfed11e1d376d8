use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Array2<f64>>) -> Self {
        let (m, v) = params.into_iter().map(|p| (Array2::zeros(p.dim()), Array2::zeros(p.dim()))).unzip();
        AdamState { m, v, step: 0, beta1: ADAM_BETA1, beta2: ADAM_BETA2, eps: ADAM_EPS }
    }
}

/// One bias-corrected Adam update with decoupled weight decay
/// (`p ← p·(1 − lr·wd)` before the moment step).
///
/// A non-finite gradient aborts the step and leaves parameters and state
/// untouched.
pub fn adam_step(
    params: &mut [&mut Array2<f64>],
    grads: &[Array2<f64>],
    state: &mut AdamState,
    learning_rate: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Precondition(format!(
            "{} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.dim() != g.dim() || p.dim() != state.m[i].dim() {
            return Err(Error::Precondition(format!("shape mismatch on parameter {i}")));
        }
        if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient (parameter {i}, element {bad})"),
                step: state.step as usize,
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let decay = 1.0 - learning_rate * weight_decay;
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        Zip::from(&mut **p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *p *= decay;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + eps);
        });
    }
    Ok(())
}
