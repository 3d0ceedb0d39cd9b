//! Small dense matrix kernels used by the convolution and dense layers.
//!
//! Row-major everywhere. The ikj loop order keeps the innermost loop
//! contiguous so it autovectorizes. Row-parallel variants split work by
//! output row, which is bitwise identical to the sequential result.

use rayon::prelude::*;

use crate::num::Scalar;

/// `out += a * b` where `a` is m x k and `b` is k x n.
pub fn matmul_acc<F: Scalar>(out: &mut [F], a: &[F], b: &[F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `a * b` into a fresh buffer.
pub fn matmul<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    matmul_acc(&mut out, a, b, m, k, n);
    out
}

/// Row-parallel `a * b`; results are identical to [`matmul`].
pub fn matmul_par<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    if m < 8 {
        return matmul(a, b, m, k, n);
    }
    let mut out = vec![F::zero(); m * n];
    out.par_chunks_mut(n)
        .zip(a.par_chunks(k))
        .for_each(|(orow, arow)| {
            for (kk, &av) in arow.iter().enumerate() {
                if av == F::zero() {
                    continue;
                }
                let brow = &b[kk * n..(kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        });
    out
}

/// `a^T * b` where `a` is m x k and `b` is m x n; result is k x n.
pub fn matmul_at_b<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut out = vec![F::zero(); k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Transpose an m x n row-major matrix.
pub fn transpose<F: Scalar>(a: &[F], m: usize, n: usize) -> Vec<F> {
    debug_assert_eq!(a.len(), m * n);
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}
