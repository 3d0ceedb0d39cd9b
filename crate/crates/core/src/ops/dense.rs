//! Fully connected layer on batched row vectors.
//!
//! Weights are stored `[in, out]` row-major so the forward matmul streams
//! both operands contiguously.

use crate::num::Scalar;
use crate::ops::matmul::{matmul_at_b, matmul_par, transpose};

/// `y = x W + b` for a batch of `n` rows.
pub fn dense_forward<F: Scalar>(x: &[F], w: &[F], b: &[F], n: usize, d_in: usize, d_out: usize) -> Vec<F> {
    debug_assert_eq!(x.len(), n * d_in);
    debug_assert_eq!(w.len(), d_in * d_out);
    debug_assert_eq!(b.len(), d_out);
    let mut y = matmul_par(x, w, n, d_in, d_out);
    for row in y.chunks_mut(d_out) {
        for (v, &bv) in row.iter_mut().zip(b) {
            *v += bv;
        }
    }
    y
}

/// Gradients of [`dense_forward`]: returns `(grad_x, grad_w, grad_b)`.
pub fn dense_backward<F: Scalar>(
    x: &[F],
    w: &[F],
    grad_y: &[F],
    n: usize,
    d_in: usize,
    d_out: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let grad_w = matmul_at_b(x, grad_y, n, d_in, d_out);
    let mut grad_b = vec![F::zero(); d_out];
    for row in grad_y.chunks(d_out) {
        for (g, &v) in grad_b.iter_mut().zip(row) {
            *g += v;
        }
    }
    let w_t = transpose(w, d_in, d_out);
    let grad_x = matmul_par(grad_y, &w_t, n, d_out, d_in);
    (grad_x, grad_w, grad_b)
}
