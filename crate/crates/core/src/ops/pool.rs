//! Max pooling: 2x2 stride-2 spatial pooling and global max pooling.
//!
//! Odd extents use floor semantics (trailing row/column dropped). Backward
//! routes each output gradient to the argmax cell; ties resolve to the first
//! cell in row-major window order.

use crate::num::Scalar;
use crate::tensor::Tensor;

/// 2x2 stride-2 max pool. Returns the pooled tensor and, per output cell and
/// channel, the flat input index of the maximum (for the backward pass).
pub fn maxpool2x2<F: Scalar>(input: &Tensor<F>) -> (Tensor<F>, Vec<u32>) {
    let (h, w, c) = input.dims3();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[oh, ow, c]);
    let mut argmax = vec![0u32; oh * ow * c];
    let data = input.data();
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best_idx = ((2 * oy) * w + 2 * ox) * c + ch;
                let mut best = data[best_idx];
                for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                    let idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    if data[idx] > best {
                        best = data[idx];
                        best_idx = idx;
                    }
                }
                out.set3(oy, ox, ch, best);
                argmax[(oy * ow + ox) * c + ch] = best_idx as u32;
            }
        }
    }
    (out, argmax)
}

pub fn maxpool2x2_backward<F: Scalar>(
    grad_out: &Tensor<F>,
    argmax: &[u32],
    input_shape: &[usize],
) -> Tensor<F> {
    let mut grad_in = Tensor::zeros(input_shape);
    let gi = grad_in.data_mut();
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        gi[idx as usize] += g;
    }
    grad_in
}

/// Global max pool over the spatial axes: `[H, W, C]` -> length-C vector
/// plus per-channel argmax indices.
pub fn global_max_pool<F: Scalar>(input: &Tensor<F>) -> (Vec<F>, Vec<u32>) {
    let (h, w, c) = input.dims3();
    let data = input.data();
    let mut out = vec![F::neg_infinity(); c];
    let mut argmax = vec![0u32; c];
    for pix in 0..h * w {
        for ch in 0..c {
            let idx = pix * c + ch;
            if data[idx] > out[ch] {
                out[ch] = data[idx];
                argmax[ch] = idx as u32;
            }
        }
    }
    (out, argmax)
}

pub fn global_max_pool_backward<F: Scalar>(
    grad_out: &[F],
    argmax: &[u32],
    input_shape: &[usize],
) -> Tensor<F> {
    let mut grad_in = Tensor::zeros(input_shape);
    let gi = grad_in.data_mut();
    for (&g, &idx) in grad_out.iter().zip(argmax) {
        gi[idx as usize] += g;
    }
    grad_in
}
