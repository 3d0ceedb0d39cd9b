//! Bias-corrected Adam update on a flat parameter buffer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{fl, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-buffer optimizer state: first and second moment accumulators plus the
/// step counter.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub hyper: AdamHyper,
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(len: usize, hyper: AdamHyper) -> Self {
        AdamState {
            hyper,
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
            t: 0,
        }
    }
}

/// One Adam step. A non-finite gradient aborts without touching the
/// parameters or the state.
pub fn adam_step<F: Scalar>(params: &mut [F], grads: &[F], state: &mut AdamState<F>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam_step: {} params, {} grads, {} state entries",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient at index {}; step aborted",
            i
        )));
    }
    state.t += 1;
    let h = state.hyper;
    let b1: F = fl(h.beta1);
    let b2: F = fl(h.beta2);
    let one = F::one();
    let corr1: F = fl(1.0 - h.beta1.powi(state.t as i32));
    let corr2: F = fl(1.0 - h.beta2.powi(state.t as i32));
    let lr: F = fl(h.lr);
    let eps: F = fl(h.eps);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let mhat = *m / corr1;
        let vhat = *v / corr2;
        *p = *p - lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}
