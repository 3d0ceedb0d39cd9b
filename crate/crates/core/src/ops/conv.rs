//! Same-padded 2-D convolution with analytic gradients.
//!
//! Layouts: input `[H, W, Cin]`, weights `[Kh, Kw, Cin, Cout]`, both
//! row-major with the last axis fastest. The forward pass lowers each image
//! to an im2col matrix of shape `(H*W) x (Kh*Kw*Cin)` and multiplies by the
//! weight matrix viewed as `(Kh*Kw*Cin) x Cout`.

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::ops::matmul::{matmul, matmul_acc, matmul_at_b, transpose};
use crate::tensor::Tensor;

fn check_shapes<F: Scalar>(input: &Tensor<F>, weights: &Tensor<F>, bias: &[F]) -> Result<()> {
    if input.shape().len() != 3 {
        return Err(Error::Shape(format!(
            "conv2d input must be rank 3 (H,W,C), got {:?}",
            input.shape()
        )));
    }
    if weights.shape().len() != 4 {
        return Err(Error::Shape(format!(
            "conv2d weights must be rank 4 (Kh,Kw,Cin,Cout), got {:?}",
            weights.shape()
        )));
    }
    let (kh, kw, cin, cout) = weights.dims4();
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::Config(format!(
            "conv2d kernel extents must be odd, got {}x{}",
            kh, kw
        )));
    }
    let (_, _, in_c) = input.dims3();
    if in_c != cin {
        return Err(Error::Shape(format!(
            "conv2d input has {} channels but weights expect {}",
            in_c, cin
        )));
    }
    if bias.len() != cout {
        return Err(Error::Shape(format!(
            "conv2d bias length {} does not match {} output channels",
            bias.len(),
            cout
        )));
    }
    Ok(())
}

/// Lower `input` into the im2col matrix for a same-padded Kh x Kw window.
fn im2col<F: Scalar>(input: &Tensor<F>, kh: usize, kw: usize) -> Vec<F> {
    let (h, w, c) = input.dims3();
    let (ph, pw) = (kh / 2, kw / 2);
    let row_len = kh * kw * c;
    let mut col = vec![F::zero(); h * w * row_len];
    let data = input.data();
    for y in 0..h {
        for x in 0..w {
            let row = &mut col[(y * w + x) * row_len..(y * w + x + 1) * row_len];
            for ky in 0..kh {
                let iy = y as isize + ky as isize - ph as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = x as isize + kx as isize - pw as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = ((iy as usize * w) + ix as usize) * c;
                    let dst = (ky * kw + kx) * c;
                    row[dst..dst + c].copy_from_slice(&data[src..src + c]);
                }
            }
        }
    }
    col
}

/// Scatter-add of an im2col-shaped gradient back onto the input raster.
fn col2im_acc<F: Scalar>(grad_col: &[F], h: usize, w: usize, c: usize, kh: usize, kw: usize) -> Tensor<F> {
    let (ph, pw) = (kh / 2, kw / 2);
    let row_len = kh * kw * c;
    let mut grad_input = Tensor::zeros(&[h, w, c]);
    let out = grad_input.data_mut();
    for y in 0..h {
        for x in 0..w {
            let row = &grad_col[(y * w + x) * row_len..(y * w + x + 1) * row_len];
            for ky in 0..kh {
                let iy = y as isize + ky as isize - ph as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = x as isize + kx as isize - pw as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = ((iy as usize * w) + ix as usize) * c;
                    let src = (ky * kw + kx) * c;
                    for ch in 0..c {
                        out[dst + ch] += row[src + ch];
                    }
                }
            }
        }
    }
    grad_input
}

/// Same-padded convolution; output is `[H, W, Cout]`.
pub fn conv2d_same<F: Scalar>(input: &Tensor<F>, weights: &Tensor<F>, bias: &[F]) -> Result<Tensor<F>> {
    check_shapes(input, weights, bias)?;
    let (h, w, _) = input.dims3();
    let (kh, kw, cin, cout) = weights.dims4();
    let col = im2col(input, kh, kw);
    let mut out = vec![F::zero(); h * w * cout];
    for row in out.chunks_mut(cout) {
        row.copy_from_slice(bias);
    }
    matmul_acc(&mut out, &col, weights.data(), h * w, kh * kw * cin, cout);
    Tensor::from_vec(&[h, w, cout], out)
}

/// Gradients of [`conv2d_same`] with respect to input, weights and bias.
pub fn conv2d_backward<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    grad_out: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Vec<F>)> {
    let (kh, kw, cin, cout) = weights.dims4();
    check_shapes(input, weights, &vec![F::zero(); cout])?;
    let (h, w, _) = input.dims3();
    if grad_out.shape() != [h, w, cout] {
        return Err(Error::Shape(format!(
            "conv2d grad_out shape {:?} does not match output [{}, {}, {}]",
            grad_out.shape(),
            h,
            w,
            cout
        )));
    }

    let col = im2col(input, kh, kw);
    let row_len = kh * kw * cin;
    let g = grad_out.data();

    let mut grad_bias = vec![F::zero(); cout];
    for row in g.chunks(cout) {
        for (gb, &gv) in grad_bias.iter_mut().zip(row) {
            *gb += gv;
        }
    }

    let grad_w = matmul_at_b(&col, g, h * w, row_len, cout);
    let grad_weights = Tensor::from_vec(&[kh, kw, cin, cout], grad_w)?;

    let w_t = transpose(weights.data(), row_len, cout);
    let grad_col = matmul(g, &w_t, h * w, cout, row_len);
    let grad_input = col2im_acc(&grad_col, h, w, cin, kh, kw);

    Ok((grad_input, grad_weights, grad_bias))
}
