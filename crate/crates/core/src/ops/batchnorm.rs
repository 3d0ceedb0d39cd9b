//! Batch normalization over `[N, H, W, C]` batches, standardizing each
//! channel across the (N, H, W) axes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{fl, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<F> {
    pub scale: Vec<F>,
    pub shift: Vec<F>,
    /// Running statistics for inference; `None` until the first train step.
    pub running: Option<RunningStats<F>>,
    pub momentum: F,
    pub eps: F,
}

impl<F: Scalar> BatchNormParams<F> {
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            scale: vec![F::one(); channels],
            shift: vec![F::zero(); channels],
            running: None,
            momentum: fl(0.1),
            eps: fl(1e-5),
        }
    }

    /// Identity running statistics (mean 0, variance 1), so a freshly built
    /// model can run inference before any training step.
    pub fn with_identity_stats(channels: usize) -> Self {
        let mut p = Self::new(channels);
        p.running = Some(RunningStats {
            mean: vec![F::zero(); channels],
            var: vec![F::one(); channels],
        });
        p
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Per-batch values cached for the backward pass.
#[derive(Debug)]
pub struct BnCache<F> {
    pub xhat: Vec<F>,
    pub inv_std: Vec<F>,
}

/// Forward pass. Train mode standardizes with batch statistics and updates
/// the running statistics; infer mode uses the stored running statistics.
pub fn batchnorm_forward<F: Scalar>(
    batch: &Tensor<F>,
    params: &mut BatchNormParams<F>,
    mode: BnMode,
) -> Result<(Tensor<F>, Option<BnCache<F>>)> {
    let (n, h, w, c) = batch.dims4();
    if c != params.channels() {
        return Err(Error::Shape(format!(
            "batchnorm expects {} channels, batch has {}",
            params.channels(),
            c
        )));
    }
    let m = n * h * w;
    match mode {
        BnMode::Train => {
            if m < 2 {
                return Err(Error::Input(format!(
                    "batchnorm train mode needs at least 2 values per channel, got {}",
                    m
                )));
            }
            let mut mean = vec![F::zero(); c];
            for row in batch.data().chunks(c) {
                for (acc, &v) in mean.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            let inv_m = F::one() / fl::<F>(m as f64);
            for v in mean.iter_mut() {
                *v *= inv_m;
            }
            let mut var = vec![F::zero(); c];
            for row in batch.data().chunks(c) {
                for ((acc, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                    let d = v - mu;
                    *acc += d * d;
                }
            }
            for v in var.iter_mut() {
                *v *= inv_m;
            }

            let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + params.eps).sqrt()).collect();
            let mut xhat = vec![F::zero(); batch.len()];
            let mut out = vec![F::zero(); batch.len()];
            for (i, row) in batch.data().chunks(c).enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    let xh = (v - mean[j]) * inv_std[j];
                    xhat[i * c + j] = xh;
                    out[i * c + j] = xh * params.scale[j] + params.shift[j];
                }
            }

            // Running stats use the unbiased batch variance.
            let unbias = fl::<F>(m as f64 / (m as f64 - 1.0));
            let momentum = params.momentum;
            let keep = F::one() - momentum;
            let running = params.running.get_or_insert_with(|| RunningStats {
                mean: vec![F::zero(); c],
                var: vec![F::one(); c],
            });
            for j in 0..c {
                running.mean[j] = keep * running.mean[j] + momentum * mean[j];
                running.var[j] = keep * running.var[j] + momentum * var[j] * unbias;
            }

            Ok((
                Tensor::from_vec(&[n, h, w, c], out)?,
                Some(BnCache { xhat, inv_std }),
            ))
        }
        BnMode::Infer => {
            let running = params.running.as_ref().ok_or_else(|| {
                Error::State("batchnorm inference before any train step: running statistics uninitialized".into())
            })?;
            let inv_std: Vec<F> = running
                .var
                .iter()
                .map(|&v| F::one() / (v + params.eps).sqrt())
                .collect();
            let mut out = vec![F::zero(); batch.len()];
            for (i, row) in batch.data().chunks(c).enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    out[i * c + j] =
                        (v - running.mean[j]) * inv_std[j] * params.scale[j] + params.shift[j];
                }
            }
            Ok((Tensor::from_vec(&[n, h, w, c], out)?, None))
        }
    }
}

/// Backward pass for train mode: gradients with respect to the batch input,
/// scale and shift.
pub fn batchnorm_backward<F: Scalar>(
    grad_out: &Tensor<F>,
    cache: &BnCache<F>,
    params: &BatchNormParams<F>,
) -> (Tensor<F>, Vec<F>, Vec<F>) {
    let (n, h, w, c) = grad_out.dims4();
    let m = n * h * w;
    let inv_m = F::one() / fl::<F>(m as f64);

    let mut grad_shift = vec![F::zero(); c];
    let mut grad_scale = vec![F::zero(); c];
    for (i, row) in grad_out.data().chunks(c).enumerate() {
        for (j, &g) in row.iter().enumerate() {
            grad_shift[j] += g;
            grad_scale[j] += g * cache.xhat[i * c + j];
        }
    }

    let mut grad_in = vec![F::zero(); grad_out.len()];
    for (i, row) in grad_out.data().chunks(c).enumerate() {
        for (j, &g) in row.iter().enumerate() {
            let xh = cache.xhat[i * c + j];
            let term = g - grad_shift[j] * inv_m - xh * grad_scale[j] * inv_m;
            grad_in[i * c + j] = params.scale[j] * cache.inv_std[j] * term;
        }
    }

    (
        Tensor::from_vec(&[n, h, w, c], grad_in).expect("shape preserved"),
        grad_scale,
        grad_shift,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Pcg32;

    fn random_batch(rng: &mut Pcg32, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.normal_f64() + 0.3).collect()).unwrap()
    }

    #[test]
    fn constant_batch_maps_to_zero() {
        let batch = Tensor::filled(&[2, 3, 3, 2], 4.2f64);
        let mut params = BatchNormParams::new(2);
        let (out, _) = batchnorm_forward(&batch, &mut params, BnMode::Train).unwrap();
        assert!(out.data().iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut rng = Pcg32::new(21);
        let batch = random_batch(&mut rng, &[3, 4, 4, 2]);
        let mut params = BatchNormParams::new(2);
        params.scale = vec![1.0, 1.0];
        params.shift = vec![0.0, 0.0];
        let (out, _) = batchnorm_forward(&batch, &mut params, BnMode::Train).unwrap();
        let m = 3 * 4 * 4;
        for j in 0..2 {
            let vals: Vec<f64> = out.data().iter().skip(j).step_by(2).copied().collect();
            let mean: f64 = vals.iter().sum::<f64>() / m as f64;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            assert!(mean.abs() < 1e-5, "mean {}", mean);
            assert!((var - 1.0).abs() < 1e-4, "var {}", var);
        }
    }

    #[test]
    fn infer_matches_hand_formula() {
        let mut rng = Pcg32::new(22);
        let mut params = BatchNormParams::new(2);
        params.scale = vec![1.5, 0.5];
        params.shift = vec![-0.25, 2.0];
        // Freeze stats with a few train steps.
        for _ in 0..3 {
            let batch = random_batch(&mut rng, &[4, 3, 3, 2]);
            batchnorm_forward(&batch, &mut params, BnMode::Train).unwrap();
        }
        let frozen = params.running.clone().unwrap();
        let batch = random_batch(&mut rng, &[2, 3, 3, 2]);
        let (out, _) = batchnorm_forward(&batch, &mut params, BnMode::Infer).unwrap();
        for (i, row) in batch.data().chunks(2).enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let want = (v - frozen.mean[j]) / (frozen.var[j] + params.eps).sqrt()
                    * params.scale[j]
                    + params.shift[j];
                let got = out.data()[i * 2 + j];
                assert!((got - want).abs() < 1e-6, "{} vs {}", got, want);
            }
        }
        // Infer mode must not advance the running statistics.
        assert_eq!(params.running.unwrap(), frozen);
    }

    #[test]
    fn infer_without_stats_is_a_state_error() {
        let batch = Tensor::<f64>::zeros(&[1, 2, 2, 1]);
        let mut params = BatchNormParams::new(1);
        let err = batchnorm_forward(&batch, &mut params, BnMode::Infer).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn train_needs_two_values_per_channel() {
        let batch = Tensor::<f64>::zeros(&[1, 1, 1, 3]);
        let mut params = BatchNormParams::new(3);
        let err = batchnorm_forward(&batch, &mut params, BnMode::Train).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }
}
