//! ReLU and the fused softmax cross-entropy head.

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::tensor::Tensor;

pub fn relu<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| if v > F::zero() { v } else { F::zero() })
}

pub fn relu_slice<F: Scalar>(x: &mut [F]) {
    for v in x.iter_mut() {
        if *v < F::zero() {
            *v = F::zero();
        }
    }
}

/// Gradient of ReLU given the pre-activation input; the subgradient at 0 is 0.
pub fn relu_backward<F: Scalar>(grad_out: &[F], input: &[F], grad_in: &mut [F]) {
    for ((g, &x), o) in grad_out.iter().zip(input).zip(grad_in.iter_mut()) {
        *o = if x > F::zero() { *g } else { F::zero() };
    }
}

/// Softmax cross-entropy loss and its gradient with respect to the logits.
///
/// `target` must be one-hot. Returns `(loss, softmax(logits) - target)`.
pub fn softmax_xent<F: Scalar>(logits: &[F], target: &[F]) -> Result<(F, Vec<F>)> {
    if logits.len() != target.len() {
        return Err(Error::Shape(format!(
            "softmax_xent: {} logits vs {} targets",
            logits.len(),
            target.len()
        )));
    }
    let mut hot = None;
    for (i, &t) in target.iter().enumerate() {
        if t == F::one() {
            if hot.is_some() {
                return Err(Error::Input("target is not one-hot: multiple ones".into()));
            }
            hot = Some(i);
        } else if t != F::zero() {
            return Err(Error::Input(format!(
                "target is not one-hot: entry {} is {}",
                i, t
            )));
        }
    }
    let hot = hot.ok_or_else(|| Error::Input("target is not one-hot: no one entry".into()))?;

    let probs = softmax(logits);
    let loss = -probs[hot].max(F::min_positive_value()).ln();
    let grad: Vec<F> = probs
        .iter()
        .zip(target)
        .map(|(&p, &t)| p - t)
        .collect();
    Ok((loss, grad))
}

/// Numerically stable softmax.
pub fn softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let max = logits
        .iter()
        .fold(F::neg_infinity(), |a, &b| if b > a { b } else { a });
    let exps: Vec<F> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: F = exps.iter().copied().sum();
    exps.into_iter().map(|v| v / sum).collect()
}
