//! Weight initialization: orthogonalized random filters for convolutions and
//! a fan-in-scaled uniform for dense layers.

use crate::error::{Error, Result};
use crate::num::{fl, Scalar};
use crate::rng::Pcg32;
use crate::tensor::Tensor;

/// Gram-Schmidt orthonormalization of `rows` random Gaussian vectors of
/// length `dim`. Requires `rows <= dim`.
fn orthonormal_rows<F: Scalar>(rng: &mut Pcg32, rows: usize, dim: usize) -> Vec<F> {
    let mut q: Vec<Vec<F>> = Vec::with_capacity(rows);
    while q.len() < rows {
        let mut v: Vec<F> = (0..dim).map(|_| rng.normal()).collect();
        // Two projection passes keep the result orthogonal well below any
        // tolerance we assert, even in f32.
        for _ in 0..2 {
            for prev in &q {
                let dot: F = v.iter().zip(prev).map(|(&a, &b)| a * b).sum();
                for (vi, &pi) in v.iter_mut().zip(prev) {
                    *vi -= dot * pi;
                }
            }
        }
        let norm = v.iter().map(|&a| a * a).sum::<F>().sqrt();
        if norm < fl(1e-8) {
            continue; // degenerate draw; try a fresh vector
        }
        for vi in v.iter_mut() {
            *vi /= norm;
        }
        q.push(v);
    }
    q.into_iter().flatten().collect()
}

/// Orthogonally initialized convolution weights of shape
/// `[kh, kw, cin, cout]`. Each filter, flattened to a row of length
/// `kh*kw*cin`, is orthonormal to every other filter.
pub fn orthogonal_init<F: Scalar>(
    rng: &mut Pcg32,
    kh: usize,
    kw: usize,
    cin: usize,
    cout: usize,
) -> Result<Tensor<F>> {
    let dim = kh * kw * cin;
    if cout > dim {
        return Err(Error::Config(format!(
            "orthogonal_init: {} filters cannot be mutually orthonormal in a {}-dimensional space",
            cout, dim
        )));
    }
    let rows = orthonormal_rows::<F>(rng, cout, dim);
    // rows is cout x dim (filter-major); weights are stored dim x cout.
    let mut data = vec![F::zero(); dim * cout];
    for f in 0..cout {
        for d in 0..dim {
            data[d * cout + f] = rows[f * dim + d];
        }
    }
    Tensor::from_vec(&[kh, kw, cin, cout], data)
}

/// Orthogonal initialization that degrades to a semi-orthogonal matrix when
/// there are more filters than the filter dimension allows: in that case the
/// `dim` columns are orthonormalized instead, so the Gram matrix over the
/// smaller side is still the identity.
pub fn orthogonal_init_semi<F: Scalar>(
    rng: &mut Pcg32,
    kh: usize,
    kw: usize,
    cin: usize,
    cout: usize,
) -> Tensor<F> {
    let dim = kh * kw * cin;
    if cout <= dim {
        return orthogonal_init(rng, kh, kw, cin, cout).expect("cout <= dim");
    }
    // cout > dim: build dim orthonormal rows of length cout and lay them out
    // as the dim x cout weight matrix directly.
    let rows = orthonormal_rows::<F>(rng, dim, cout);
    Tensor::from_vec(&[kh, kw, cin, cout], rows).expect("dim*cout values")
}

/// Fan-in-scaled uniform init for dense layers, `[d_in, d_out]`.
pub fn he_uniform<F: Scalar>(rng: &mut Pcg32, d_in: usize, d_out: usize) -> Tensor<F> {
    let limit = (6.0 / d_in as f64).sqrt();
    let data: Vec<F> = (0..d_in * d_out)
        .map(|_| rng.uniform(-limit, limit))
        .collect();
    Tensor::from_vec(&[d_in, d_out], data).expect("d_in*d_out values")
}

/// Gram matrix over the smaller side of the flattened filter matrix; used to
/// verify orthonormality.
pub fn filter_gram<F: Scalar>(weights: &Tensor<F>) -> Vec<F> {
    let (kh, kw, cin, cout) = weights.dims4();
    let dim = kh * kw * cin;
    let n = cout.min(dim);
    let mut gram = vec![F::zero(); n * n];
    let w = weights.data();
    if cout <= dim {
        // Rows are filters: G[i][j] = <f_i, f_j>.
        for i in 0..n {
            for j in 0..n {
                let mut acc = F::zero();
                for d in 0..dim {
                    acc += w[d * cout + i] * w[d * cout + j];
                }
                gram[i * n + j] = acc;
            }
        }
    } else {
        // More filters than dimensions: check the dim x dim Gram of the
        // weight-matrix rows (one per flattened position).
        for i in 0..n {
            for j in 0..n {
                let mut acc = F::zero();
                for f in 0..cout {
                    acc += w[i * cout + f] * w[j * cout + f];
                }
                gram[i * n + j] = acc;
            }
        }
    }
    gram
}
