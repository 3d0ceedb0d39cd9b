//! The four-conv VGG-style classifier: C1(32) BN ReLU, C2(32) BN ReLU, pool,
//! C3(64) BN ReLU, C4(64) BN ReLU, pool, FC(512) ReLU, FC(128) ReLU, 2-way
//! head.

pub mod checkpoint;
pub mod train;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::patch::Patch;
use crate::error::{Error, Result};
use crate::num::{fl, Scalar};
use crate::ops::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_same, dense_backward,
    dense_forward, he_uniform, orthogonal_init_semi, relu_backward, softmax, BatchNormParams,
    BnCache, BnMode,
};
use crate::rng::Pcg32;
use crate::tensor::Tensor;

pub use checkpoint::{Checkpoint, TrainingLog};
pub use train::{cross_validate, train_fold, CvResult, EpochRecord, FoldOutcome};

pub const SUPPORTED_INPUT_SIZES: [usize; 4] = [30, 32, 34, 64];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_size: usize,
    /// Modality names in channel order.
    pub channels: Vec<String>,
    pub conv_widths: [usize; 4],
    pub kernel_size: usize,
    pub fc_widths: [usize; 2],
    pub classes: usize,
    pub optimizer: crate::ops::AdamHyper,
    pub epochs: usize,
    pub batch_size: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 32,
            channels: vec!["T2W".into(), "ADC".into(), "DWI_b50".into()],
            conv_widths: [32, 32, 64, 64],
            kernel_size: 3,
            fc_widths: [512, 128],
            classes: 2,
            optimizer: crate::ops::AdamHyper::default(),
            epochs: 100,
            batch_size: 32,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_INPUT_SIZES.contains(&self.input_size) {
            return Err(Error::Config(format!(
                "input size {} not in supported set {:?}",
                self.input_size, SUPPORTED_INPUT_SIZES
            )));
        }
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return Err(Error::Config(format!(
                "kernel size {} must be odd",
                self.kernel_size
            )));
        }
        if self.channels.is_empty() {
            return Err(Error::Config("at least one input channel required".into()));
        }
        if self.classes != 2 {
            return Err(Error::Config("the classifier head is two-class".into()));
        }
        if self.conv_widths.iter().any(|&w| w == 0) || self.fc_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Spatial extents along the sequence: C1, C2, pool, C3, C4, pool.
    pub fn spatial_sizes(&self) -> [usize; 6] {
        let s = self.input_size;
        let p1 = s / 2;
        let p2 = p1 / 2;
        [s, s, p1, p1, p1, p2]
    }

    pub fn flatten_len(&self) -> usize {
        let p2 = (self.input_size / 2) / 2;
        p2 * p2 * self.conv_widths[3]
    }
}

#[derive(Clone, Debug)]
pub struct ConvBlock<F> {
    pub weights: Tensor<F>, // [k, k, cin, cout]
    pub bias: Vec<F>,
    pub bn: BatchNormParams<F>,
}

#[derive(Clone, Debug)]
pub struct DenseLayer<F> {
    pub weights: Tensor<F>, // [d_in, d_out]
    pub bias: Vec<F>,
}

#[derive(Clone, Debug)]
pub struct Network<F> {
    pub config: ModelConfig,
    pub conv: Vec<ConvBlock<F>>,
    pub fc1: DenseLayer<F>,
    pub fc2: DenseLayer<F>,
    pub head: DenseLayer<F>,
}

/// A batch of samples as `[N, H, W, C]`.
fn sample_of<F: Scalar>(batch: &Tensor<F>, n: usize) -> Tensor<F> {
    let (_, h, w, c) = batch.dims4();
    let stride = h * w * c;
    Tensor::from_vec(&[h, w, c], batch.data()[n * stride..(n + 1) * stride].to_vec())
        .expect("sample slice")
}

fn batch_from_samples<F: Scalar>(samples: &[Tensor<F>]) -> Tensor<F> {
    let (h, w, c) = samples[0].dims3();
    let mut data = Vec::with_capacity(samples.len() * h * w * c);
    for s in samples {
        data.extend_from_slice(s.data());
    }
    Tensor::from_vec(&[samples.len(), h, w, c], data).expect("stacked batch")
}

/// Caches from a training-mode forward pass, consumed by `backward`.
pub struct TrainCache<F> {
    conv_inputs: Vec<Tensor<F>>,   // batch input to each conv, [N,h,w,cin]
    bn_caches: Vec<BnCache<F>>,    // per conv block
    bn_outputs: Vec<Tensor<F>>,    // pre-ReLU
    pool_argmax: Vec<Vec<Vec<u32>>>, // per pool, per sample
    pool_input_shapes: Vec<[usize; 3]>,
    flat: Vec<F>,     // N x flatten_len
    fc1_pre: Vec<F>,  // N x fc1
    fc1_act: Vec<F>,
    fc2_pre: Vec<F>,
    fc2_act: Vec<F>,
    n: usize,
}

/// Gradients for every trainable buffer, in `trainable_params` order.
pub type GradientSet<F> = Vec<Vec<F>>;

impl<F: Scalar> Network<F> {
    /// Build a model with orthogonally initialized conv filters. Batch-norm
    /// running statistics start at the identity (mean 0, variance 1) so the
    /// untrained model can already run inference.
    pub fn build(config: &ModelConfig, rng: &Pcg32) -> Result<Self> {
        config.validate()?;
        let k = config.kernel_size;
        let mut conv = Vec::with_capacity(4);
        let mut cin = config.channels.len();
        for (i, &cout) in config.conv_widths.iter().enumerate() {
            let mut layer_rng = rng.substream(&format!("init/conv{}", i + 1));
            let weights = orthogonal_init_semi(&mut layer_rng, k, k, cin, cout);
            let mut bn = BatchNormParams::with_identity_stats(cout);
            bn.momentum = fl(config.bn_momentum);
            bn.eps = fl(config.bn_eps);
            conv.push(ConvBlock {
                weights,
                bias: vec![F::zero(); cout],
                bn,
            });
            cin = cout;
        }
        let flat = config.flatten_len();
        let mut fc1_rng = rng.substream("init/fc1");
        let mut fc2_rng = rng.substream("init/fc2");
        let mut head_rng = rng.substream("init/head");
        let fc1 = DenseLayer {
            weights: he_uniform(&mut fc1_rng, flat, config.fc_widths[0]),
            bias: vec![F::zero(); config.fc_widths[0]],
        };
        let fc2 = DenseLayer {
            weights: he_uniform(&mut fc2_rng, config.fc_widths[0], config.fc_widths[1]),
            bias: vec![F::zero(); config.fc_widths[1]],
        };
        let head = DenseLayer {
            weights: he_uniform(&mut head_rng, config.fc_widths[1], config.classes),
            bias: vec![F::zero(); config.classes],
        };
        Ok(Network {
            config: config.clone(),
            conv,
            fc1,
            fc2,
            head,
        })
    }

    /// Trainable buffers in canonical order (running stats excluded).
    pub fn trainable_params_mut(&mut self) -> Vec<(String, &mut Vec<F>)> {
        let mut out: Vec<(String, &mut Vec<F>)> = Vec::new();
        for (i, block) in self.conv.iter_mut().enumerate() {
            let ConvBlock { weights, bias, bn } = block;
            out.push((format!("conv{}.weight", i + 1), weights.data_vec_mut()));
            out.push((format!("conv{}.bias", i + 1), bias));
            out.push((format!("bn{}.scale", i + 1), &mut bn.scale));
            out.push((format!("bn{}.shift", i + 1), &mut bn.shift));
        }
        let DenseLayer { weights, bias } = &mut self.fc1;
        out.push(("fc1.weight".into(), weights.data_vec_mut()));
        out.push(("fc1.bias".into(), bias));
        let DenseLayer { weights, bias } = &mut self.fc2;
        out.push(("fc2.weight".into(), weights.data_vec_mut()));
        out.push(("fc2.bias".into(), bias));
        let DenseLayer { weights, bias } = &mut self.head;
        out.push(("head.weight".into(), weights.data_vec_mut()));
        out.push(("head.bias".into(), bias));
        out
    }

    fn conv_forward_batch(
        block: &ConvBlock<F>,
        batch: &Tensor<F>,
    ) -> Result<Tensor<F>> {
        let (n, _, _, _) = batch.dims4();
        let samples: Vec<Tensor<F>> = (0..n)
            .into_par_iter()
            .map(|s| conv2d_same(&sample_of(batch, s), &block.weights, &block.bias))
            .collect::<Result<Vec<_>>>()?;
        Ok(batch_from_samples(&samples))
    }

    fn pool_forward_batch(batch: &Tensor<F>) -> (Tensor<F>, Vec<Vec<u32>>, [usize; 3]) {
        let (n, h, w, c) = batch.dims4();
        let mut outs = Vec::with_capacity(n);
        let mut argmaxes = Vec::with_capacity(n);
        for s in 0..n {
            let (o, a) = crate::ops::maxpool2x2(&sample_of(batch, s));
            outs.push(o);
            argmaxes.push(a);
        }
        (batch_from_samples(&outs), argmaxes, [h, w, c])
    }

    fn relu_batch(batch: &Tensor<F>) -> Tensor<F> {
        batch.map(|v| if v > F::zero() { v } else { F::zero() })
    }

    /// Training-mode forward pass over a batch; updates batch-norm running
    /// statistics. Returns per-sample logits (N x classes) and the caches
    /// needed for `backward`.
    pub fn forward_train(&mut self, batch: &Tensor<F>) -> Result<(Vec<F>, TrainCache<F>)> {
        let (n, h, w, c) = batch.dims4();
        if h != self.config.input_size || w != self.config.input_size || c != self.config.channels.len()
        {
            return Err(Error::Shape(format!(
                "batch shape {:?} does not match configured input {}x{}x{}",
                batch.shape(),
                self.config.input_size,
                self.config.input_size,
                self.config.channels.len()
            )));
        }

        let mut conv_inputs = Vec::with_capacity(4);
        let mut bn_caches = Vec::with_capacity(4);
        let mut bn_outputs = Vec::with_capacity(4);
        let mut pool_argmax = Vec::with_capacity(2);
        let mut pool_input_shapes = Vec::with_capacity(2);

        let mut x = batch.clone();
        for (i, block_idx) in [0usize, 1, 2, 3].iter().enumerate() {
            let conv_out = {
                let block = &self.conv[*block_idx];
                conv_inputs.push(x.clone());
                Self::conv_forward_batch(block, &x)?
            };
            let block = &mut self.conv[*block_idx];
            let (bn_out, cache) = batchnorm_forward(&conv_out, &mut block.bn, BnMode::Train)?;
            bn_caches.push(cache.expect("train mode yields a cache"));
            bn_outputs.push(bn_out.clone());
            x = Self::relu_batch(&bn_out);
            if i == 1 || i == 3 {
                let (pooled, argmax, shape) = Self::pool_forward_batch(&x);
                pool_argmax.push(argmax);
                pool_input_shapes.push(shape);
                x = pooled;
            }
        }

        let flat_len = self.config.flatten_len();
        let flat = x.data().to_vec();
        debug_assert_eq!(flat.len(), n * flat_len);

        let fc1_pre = dense_forward(
            &flat,
            self.fc1.weights.data(),
            &self.fc1.bias,
            n,
            flat_len,
            self.config.fc_widths[0],
        );
        let mut fc1_act = fc1_pre.clone();
        crate::ops::activation::relu_slice(&mut fc1_act);
        let fc2_pre = dense_forward(
            &fc1_act,
            self.fc2.weights.data(),
            &self.fc2.bias,
            n,
            self.config.fc_widths[0],
            self.config.fc_widths[1],
        );
        let mut fc2_act = fc2_pre.clone();
        crate::ops::activation::relu_slice(&mut fc2_act);
        let logits = dense_forward(
            &fc2_act,
            self.head.weights.data(),
            &self.head.bias,
            n,
            self.config.fc_widths[1],
            self.config.classes,
        );

        Ok((
            logits,
            TrainCache {
                conv_inputs,
                bn_caches,
                bn_outputs,
                pool_argmax,
                pool_input_shapes,
                flat,
                fc1_pre,
                fc1_act,
                fc2_pre,
                fc2_act,
                n,
            },
        ))
    }

    /// Backward pass; returns gradients in `trainable_params_mut` order.
    pub fn backward(&self, cache: &TrainCache<F>, grad_logits: &[F]) -> Result<GradientSet<F>> {
        let n = cache.n;
        let cfg = &self.config;
        let (grad_fc2_act, g_head_w, g_head_b) = dense_backward(
            &cache.fc2_act,
            self.head.weights.data(),
            grad_logits,
            n,
            cfg.fc_widths[1],
            cfg.classes,
        );
        let mut grad_fc2_pre = vec![F::zero(); grad_fc2_act.len()];
        relu_backward(&grad_fc2_act, &cache.fc2_pre, &mut grad_fc2_pre);

        let (grad_fc1_act, g_fc2_w, g_fc2_b) = dense_backward(
            &cache.fc1_act,
            self.fc2.weights.data(),
            &grad_fc2_pre,
            n,
            cfg.fc_widths[0],
            cfg.fc_widths[1],
        );
        let mut grad_fc1_pre = vec![F::zero(); grad_fc1_act.len()];
        relu_backward(&grad_fc1_act, &cache.fc1_pre, &mut grad_fc1_pre);

        let flat_len = cfg.flatten_len();
        let (grad_flat, g_fc1_w, g_fc1_b) = dense_backward(
            &cache.flat,
            self.fc1.weights.data(),
            &grad_fc1_pre,
            n,
            flat_len,
            cfg.fc_widths[0],
        );

        // Reshape the flat gradient into the second pool's output batch.
        let p2 = (cfg.input_size / 2) / 2;
        let mut grad = Tensor::from_vec(&[n, p2, p2, cfg.conv_widths[3]], grad_flat)?;

        let mut conv_grads: Vec<(Vec<F>, Vec<F>, Vec<F>, Vec<F>)> = Vec::with_capacity(4);

        for block_idx in (0..4).rev() {
            if block_idx == 3 || block_idx == 1 {
                // Undo the pool that followed this block.
                let pool_idx = if block_idx == 3 { 1 } else { 0 };
                let shape = cache.pool_input_shapes[pool_idx];
                let argmaxes = &cache.pool_argmax[pool_idx];
                let (gn, gh, gw_, gc) = grad.dims4();
                debug_assert_eq!((gh, gw_), (shape[0] / 2, shape[1] / 2));
                let mut samples = Vec::with_capacity(gn);
                for s in 0..gn {
                    let g_s = sample_of(&grad, s);
                    let g_s = Tensor::from_vec(&[gh, gw_, gc], g_s.into_data())?;
                    samples.push(crate::ops::maxpool2x2_backward(
                        &g_s,
                        &argmaxes[s],
                        &shape,
                    ));
                }
                grad = batch_from_samples(&samples);
            }

            // ReLU then batch-norm.
            let bn_out = &cache.bn_outputs[block_idx];
            let mut grad_pre = vec![F::zero(); grad.len()];
            relu_backward(grad.data(), bn_out.data(), &mut grad_pre);
            let grad_pre = Tensor::from_vec(bn_out.shape(), grad_pre)?;
            let (grad_conv_out, g_scale, g_shift) = batchnorm_backward(
                &grad_pre,
                &cache.bn_caches[block_idx],
                &self.conv[block_idx].bn,
            );

            // Conv backward, per sample in parallel with fixed-order reduce.
            let block = &self.conv[block_idx];
            let input = &cache.conv_inputs[block_idx];
            let (gn, _, _, _) = grad_conv_out.dims4();
            let per_sample: Vec<(Tensor<F>, Tensor<F>, Vec<F>)> = (0..gn)
                .into_par_iter()
                .map(|s| {
                    conv2d_backward(
                        &sample_of(input, s),
                        &block.weights,
                        &sample_of(&grad_conv_out, s),
                    )
                })
                .collect::<Result<Vec<_>>>()?;

            let mut g_w = vec![F::zero(); block.weights.len()];
            let mut g_b = vec![F::zero(); block.bias.len()];
            let mut grad_inputs = Vec::with_capacity(gn);
            for (gi, gw, gb) in per_sample {
                for (acc, v) in g_w.iter_mut().zip(gw.data()) {
                    *acc += *v;
                }
                for (acc, v) in g_b.iter_mut().zip(&gb) {
                    *acc += *v;
                }
                grad_inputs.push(gi);
            }
            grad = batch_from_samples(&grad_inputs);

            conv_grads.push((g_w, g_b, g_scale, g_shift));
        }
        conv_grads.reverse();

        let mut out: GradientSet<F> = Vec::with_capacity(22);
        for (g_w, g_b, g_scale, g_shift) in conv_grads {
            out.push(g_w);
            out.push(g_b);
            out.push(g_scale);
            out.push(g_shift);
        }
        out.push(g_fc1_w);
        out.push(g_fc1_b);
        out.push(g_fc2_w);
        out.push(g_fc2_b);
        out.push(g_head_w);
        out.push(g_head_b);
        Ok(out)
    }

    /// Inference-mode forward over the conv stack for a single patch of any
    /// spatial size. Returns the post-ReLU map of each conv block plus the
    /// final pooled map.
    pub fn conv_stack_infer(&self, patch: &Tensor<F>) -> Result<ConvFeatures<F>> {
        let (_, _, c) = patch.dims3();
        if c != self.config.channels.len() {
            return Err(Error::Shape(format!(
                "patch has {} channels, model expects {}",
                c,
                self.config.channels.len()
            )));
        }
        let mut maps = Vec::with_capacity(4);
        let mut x = patch.clone();
        for (i, block) in self.conv.iter().enumerate() {
            let conv_out = conv2d_same(&x, &block.weights, &block.bias)?;
            let (h, w, ch) = conv_out.dims3();
            let as_batch = Tensor::from_vec(&[1, h, w, ch], conv_out.into_data())?;
            // Infer mode never mutates params; clone the block's bn view.
            let mut bn = block.bn.clone();
            let (bn_out, _) = batchnorm_forward(&as_batch, &mut bn, BnMode::Infer)?;
            let act = Self::relu_batch(&bn_out);
            let act3 = Tensor::from_vec(&[h, w, ch], act.into_data())?;
            maps.push(act3.clone());
            x = act3;
            if i == 1 || i == 3 {
                let (pooled, _) = crate::ops::maxpool2x2(&x);
                x = pooled;
            }
        }
        Ok(ConvFeatures {
            conv_maps: maps,
            pooled: x,
        })
    }

    /// Full inference on a single patch: probabilities over (benign,
    /// malignant).
    pub fn forward_infer(&self, patch: &Tensor<F>) -> Result<[F; 2]> {
        let (h, w, _) = patch.dims3();
        if h != self.config.input_size || w != self.config.input_size {
            return Err(Error::Input(format!(
                "patch is {}x{}, model expects {}x{}",
                h, w, self.config.input_size, self.config.input_size
            )));
        }
        let features = self.conv_stack_infer(patch)?;
        let (fc1, fc2, logits) = self.dense_head(features.pooled.data())?;
        let _ = (fc1, fc2);
        let probs = softmax(&logits);
        Ok([probs[0], probs[1]])
    }

    /// Dense head on a flattened pooled map: returns post-activation FC1 and
    /// FC2 vectors plus the logits.
    pub fn dense_head(&self, flat: &[F]) -> Result<(Vec<F>, Vec<F>, Vec<F>)> {
        let flat_len = self.config.flatten_len();
        if flat.len() != flat_len {
            return Err(Error::Shape(format!(
                "flattened feature length {} does not match configured {}",
                flat.len(),
                flat_len
            )));
        }
        let mut fc1 = dense_forward(
            flat,
            self.fc1.weights.data(),
            &self.fc1.bias,
            1,
            flat_len,
            self.config.fc_widths[0],
        );
        crate::ops::activation::relu_slice(&mut fc1);
        let mut fc2 = dense_forward(
            &fc1,
            self.fc2.weights.data(),
            &self.fc2.bias,
            1,
            self.config.fc_widths[0],
            self.config.fc_widths[1],
        );
        crate::ops::activation::relu_slice(&mut fc2);
        let logits = dense_forward(
            &fc2,
            self.head.weights.data(),
            &self.head.bias,
            1,
            self.config.fc_widths[1],
            self.config.classes,
        );
        Ok((fc1, fc2, logits))
    }

    /// Class probabilities for a patch, validating channels and size.
    pub fn predict(&self, patch: &Patch) -> Result<(f64, f64)>
    where
        F: Scalar,
    {
        if patch.channels != self.config.channels {
            return Err(Error::Input(format!(
                "patch channels {:?} do not match model channels {:?}",
                patch.channels, self.config.channels
            )));
        }
        if patch.size != self.config.input_size {
            return Err(Error::Input(format!(
                "patch size {} does not match model input size {}",
                patch.size, self.config.input_size
            )));
        }
        let input: Tensor<F> = patch.data.cast();
        let probs = self.forward_infer(&input)?;
        let pb = probs[0].to_f64().unwrap_or(f64::NAN);
        let pm = probs[1].to_f64().unwrap_or(f64::NAN);
        Ok((pb, pm))
    }
}

/// Post-ReLU conv maps and the final pooled map of the conv stack.
pub struct ConvFeatures<F> {
    pub conv_maps: Vec<Tensor<F>>,
    pub pooled: Tensor<F>,
}

impl<F: Scalar> Network<F> {
    pub fn cast<G: Scalar>(&self) -> Network<G> {
        Network {
            config: self.config.clone(),
            conv: self
                .conv
                .iter()
                .map(|b| ConvBlock {
                    weights: b.weights.cast(),
                    bias: b.bias.iter().map(|&v| G::from(v).unwrap()).collect(),
                    bn: BatchNormParams {
                        scale: b.bn.scale.iter().map(|&v| G::from(v).unwrap()).collect(),
                        shift: b.bn.shift.iter().map(|&v| G::from(v).unwrap()).collect(),
                        running: b.bn.running.as_ref().map(|r| crate::ops::RunningStats {
                            mean: r.mean.iter().map(|&v| G::from(v).unwrap()).collect(),
                            var: r.var.iter().map(|&v| G::from(v).unwrap()).collect(),
                        }),
                        momentum: G::from(b.bn.momentum).unwrap(),
                        eps: G::from(b.bn.eps).unwrap(),
                    },
                })
                .collect(),
            fc1: cast_dense(&self.fc1),
            fc2: cast_dense(&self.fc2),
            head: cast_dense(&self.head),
        }
    }
}

fn cast_dense<F: Scalar, G: Scalar>(layer: &DenseLayer<F>) -> DenseLayer<G> {
    DenseLayer {
        weights: layer.weights.cast(),
        bias: layer.bias.iter().map(|&v| G::from(v).unwrap()).collect(),
    }
}

/// Assemble a batch tensor from patches (casting to the working scalar).
pub fn batch_from_patches<F: Scalar>(patches: &[&Patch]) -> Tensor<F> {
    let (h, w, c) = patches[0].data.dims3();
    let mut data = Vec::with_capacity(patches.len() * h * w * c);
    for p in patches {
        data.extend(p.data.data().iter().map(|&v| F::from(v).unwrap()));
    }
    Tensor::from_vec(&[patches.len(), h, w, c], data).expect("batch tensor")
}
