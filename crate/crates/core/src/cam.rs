//! Class activation maps: a truncated head over the frozen conv stack,
//! fine-tuned on global-max-pooled C4 features, and the per-class saliency
//! raster as a weighted sum of C4 feature maps.
//!
//! The conv stack has no size-dependent parameters, so the map can be
//! computed fully convolutionally on patches larger than the training size.

use serde::{Deserialize, Serialize};

use crate::data::manifest::Label;
use crate::data::patch::Patch;
use crate::error::{Error, Result};
use crate::metrics::confusion_metrics;
use crate::model::checkpoint::{Container, ContainerTensor};
use crate::model::{Checkpoint, Network};
use crate::ops::{adam_step, global_max_pool, softmax, softmax_xent, AdamState};
use crate::rng::Pcg32;
use crate::tensor::Tensor;
use crate::Tensor32;

#[derive(Clone, Debug)]
pub struct CamHead {
    /// The source network; only its conv stack runs here.
    pub network: Network<f32>,
    /// Head weights connecting pooled C4 maps to the two output nodes.
    pub v: Tensor32, // [c4_width, 2]
    pub bias: Vec<f32>,
    pub frozen: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CamTrainConfig {
    pub max_epochs: usize,
    pub lr: f64,
    /// Convergence: loss change below this over 5 epochs stops training.
    pub tolerance: f64,
    /// Train the conv stack too instead of freezing it.
    pub full_finetune: bool,
}

impl Default for CamTrainConfig {
    fn default() -> Self {
        CamTrainConfig {
            max_epochs: 500,
            lr: 1e-2,
            tolerance: 1e-4,
            full_finetune: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CamMap {
    pub class: usize,
    /// C4-resolution raster.
    pub raw: Tensor32,
    /// Bilinearly upsampled to the patch size, min-max normalized to [0,1].
    pub upsampled: Tensor32,
    /// Raw-map range before display normalization.
    pub range: (f32, f32),
}

/// Truncate a trained checkpoint into a CAM head. The head weights are
/// seeded from the checkpoint's configured seed; the conv stack is frozen.
pub fn build_cam_head(checkpoint: &Checkpoint) -> Result<CamHead> {
    let network = checkpoint.network.clone();
    if network.conv.len() != 4 {
        return Err(Error::Format(format!(
            "checkpoint carries {} conv blocks, need 4 (C4 missing)",
            network.conv.len()
        )));
    }
    let c4 = network.config.conv_widths[3];
    let mut rng = Pcg32::new(network.config.seed).substream("cam/init");
    // Near-zero init: channels the fine-tuning finds useless then contribute
    // nothing to the map.
    let data: Vec<f32> = (0..c4 * 2).map(|_| 0.01 * rng.normal::<f32>()).collect();
    let v = Tensor::from_vec(&[c4, 2], data)?;
    Ok(CamHead {
        network,
        v,
        bias: vec![0.0; 2],
        frozen: true,
    })
}

impl CamHead {
    /// Pooled C4 feature vector for one patch (inference-mode stack).
    pub fn pooled_features(&self, patch: &Tensor32) -> Result<Vec<f32>> {
        let features = self.network.conv_stack_infer(patch)?;
        let (pooled, _) = global_max_pool(&features.conv_maps[3]);
        Ok(pooled)
    }

    /// Head logits on pooled features.
    pub fn head_logits(&self, pooled: &[f32]) -> Vec<f32> {
        crate::ops::dense_forward(pooled, self.v.data(), &self.bias, 1, pooled.len(), 2)
    }

    /// Full forward: pooled stack features then head.
    pub fn forward(&self, patch: &Tensor32) -> Result<Vec<f32>> {
        Ok(self.head_logits(&self.pooled_features(patch)?))
    }

    pub fn predict_proba(&self, patch: &Tensor32) -> Result<[f32; 2]> {
        let logits = self.forward(patch)?;
        let probs = softmax(&logits);
        Ok([probs[0], probs[1]])
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CamTrainLog {
    pub losses: Vec<f64>,
    pub converged_at: Option<usize>,
    pub train_accuracy: f64,
}

/// Fine-tune the head on softmax cross-entropy with Adam. With the stack
/// frozen (the default) the pooled features are computed once and cached.
pub fn finetune_cam(
    head: &mut CamHead,
    patches: &[Patch],
    config: &CamTrainConfig,
) -> Result<CamTrainLog> {
    if patches.is_empty() {
        return Err(Error::Input("fine-tuning needs at least one patch".into()));
    }
    if config.full_finetune {
        return finetune_cam_full(head, patches, config);
    }

    let pooled: Vec<Vec<f32>> = patches
        .iter()
        .map(|p| head.pooled_features(&p.data))
        .collect::<Result<Vec<_>>>()?;
    let classes: Vec<usize> = patches
        .iter()
        .map(|p| match p.record.label {
            Label::Malignant => 1,
            _ => 0,
        })
        .collect();

    let d = pooled[0].len();
    let hyper = crate::ops::AdamHyper {
        lr: config.lr,
        ..Default::default()
    };
    let mut v_state = AdamState::new(d * 2, hyper);
    let mut b_state = AdamState::new(2, hyper);
    let mut log = CamTrainLog::default();

    for epoch in 0..config.max_epochs {
        let n = patches.len();
        let mut grad_v = vec![0.0f32; d * 2];
        let mut grad_b = vec![0.0f32; 2];
        let mut loss_sum = 0.0f64;
        for (x, &class) in pooled.iter().zip(&classes) {
            let logits = head.head_logits(x);
            let mut target = vec![0.0f32; 2];
            target[class] = 1.0;
            let (loss, grad) = softmax_xent(&logits, &target)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss while fine-tuning at epoch {}",
                    epoch
                )));
            }
            loss_sum += loss as f64;
            let scale = 1.0 / n as f32;
            for (j, &g) in grad.iter().enumerate() {
                grad_b[j] += g * scale;
                for (i, &xi) in x.iter().enumerate() {
                    grad_v[i * 2 + j] += xi * g * scale;
                }
            }
        }
        log.losses.push(loss_sum / n as f64);
        adam_step(head.v.data_mut(), &grad_v, &mut v_state)?;
        adam_step(&mut head.bias, &grad_b, &mut b_state)?;

        if epoch >= 5 {
            let prev = log.losses[epoch - 5];
            if (prev - log.losses[epoch]).abs() < config.tolerance {
                log.converged_at = Some(epoch);
                break;
            }
        }
    }

    let mut correct = 0usize;
    for (x, &class) in pooled.iter().zip(&classes) {
        let logits = head.head_logits(x);
        let pred = if logits[1] > logits[0] { 1 } else { 0 };
        if pred == class {
            correct += 1;
        }
    }
    log.train_accuracy = correct as f64 / patches.len() as f64;
    Ok(log)
}

/// Full fine-tuning: trains the conv stack together with the head, using the
/// batch machinery of the main trainer with the head swapped in.
fn finetune_cam_full(
    head: &mut CamHead,
    patches: &[Patch],
    config: &CamTrainConfig,
) -> Result<CamTrainLog> {
    use crate::model::batch_from_patches;
    use crate::ops::{
        batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_same, relu_backward,
        BnMode,
    };

    head.frozen = false;
    let hyper = crate::ops::AdamHyper {
        lr: config.lr,
        ..Default::default()
    };
    let mut states: Vec<AdamState<f32>> = Vec::new();
    {
        let net = &mut head.network;
        for block in net.conv.iter_mut() {
            states.push(AdamState::new(block.weights.len(), hyper));
            states.push(AdamState::new(block.bias.len(), hyper));
            states.push(AdamState::new(block.bn.scale.len(), hyper));
            states.push(AdamState::new(block.bn.shift.len(), hyper));
        }
    }
    let mut v_state = AdamState::new(head.v.len(), hyper);
    let mut b_state = AdamState::new(2, hyper);

    let classes: Vec<usize> = patches
        .iter()
        .map(|p| match p.record.label {
            Label::Malignant => 1,
            _ => 0,
        })
        .collect();
    let refs: Vec<&Patch> = patches.iter().collect();
    let batch = batch_from_patches::<f32>(&refs);
    let (n, _, _, _) = batch.dims4();

    let mut log = CamTrainLog::default();
    for epoch in 0..config.max_epochs {
        // Forward through the conv stack in train mode, one big batch.
        let mut x = batch.clone();
        let mut conv_inputs = Vec::new();
        let mut bn_caches = Vec::new();
        let mut bn_outputs = Vec::new();
        let mut pool_argmax = Vec::new();
        let mut pool_shapes = Vec::new();
        for i in 0..4 {
            conv_inputs.push(x.clone());
            let mut samples = Vec::with_capacity(n);
            for s in 0..n {
                let sample = sample4(&x, s);
                samples.push(conv2d_same(
                    &sample,
                    &head.network.conv[i].weights,
                    &head.network.conv[i].bias,
                )?);
            }
            let conv_out = stack4(&samples);
            let (bn_out, cache) =
                batchnorm_forward(&conv_out, &mut head.network.conv[i].bn, BnMode::Train)?;
            bn_caches.push(cache.expect("train cache"));
            bn_outputs.push(bn_out.clone());
            x = bn_out.map(|v| if v > 0.0 { v } else { 0.0 });
            if i == 1 || i == 3 {
                let (gh, gw, gc) = {
                    let (_, h, w, c) = x.dims4();
                    (h, w, c)
                };
                let mut pooled = Vec::with_capacity(n);
                let mut args = Vec::with_capacity(n);
                for s in 0..n {
                    let (p, a) = crate::ops::maxpool2x2(&sample4(&x, s));
                    pooled.push(p);
                    args.push(a);
                }
                pool_argmax.push(args);
                pool_shapes.push([gh, gw, gc]);
                x = stack4(&pooled);
            }
        }

        // Global max pool per sample, then the linear head.
        let c4 = head.network.config.conv_widths[3];
        let mut pooled_rows = vec![0.0f32; n * c4];
        let mut pool_args = Vec::with_capacity(n);
        let mut c4_maps = Vec::with_capacity(n);
        for s in 0..n {
            let m = sample4_from_pre_pool(&bn_outputs[3], s)?;
            // Pool over the post-ReLU C4 map (pre 2x2 pool).
            let act = m.map(|v| if v > 0.0 { v } else { 0.0 });
            let (p, a) = global_max_pool(&act);
            pooled_rows[s * c4..(s + 1) * c4].copy_from_slice(&p);
            pool_args.push(a);
            c4_maps.push(act);
        }

        let mut loss_sum = 0.0f64;
        let mut grad_v = vec![0.0f32; c4 * 2];
        let mut grad_b = vec![0.0f32; 2];
        let mut grad_pooled = vec![0.0f32; n * c4];
        for s in 0..n {
            let row = &pooled_rows[s * c4..(s + 1) * c4];
            let logits = head.head_logits(row);
            let mut target = vec![0.0f32; 2];
            target[classes[s]] = 1.0;
            let (loss, grad) = softmax_xent(&logits, &target)?;
            loss_sum += loss as f64;
            let scale = 1.0 / n as f32;
            for (j, &g) in grad.iter().enumerate() {
                grad_b[j] += g * scale;
                for (i, &xi) in row.iter().enumerate() {
                    grad_v[i * 2 + j] += xi * g * scale;
                    grad_pooled[s * c4 + i] += head.v.data()[i * 2 + j] * g * scale;
                }
            }
        }
        log.losses.push(loss_sum / n as f64);

        // Route pooled gradients back onto the C4 activation maps, then
        // through ReLU, BN and the conv stack in reverse.
        let mut grad_samples = Vec::with_capacity(n);
        for s in 0..n {
            let g = crate::ops::global_max_pool_backward(
                &grad_pooled[s * c4..(s + 1) * c4],
                &pool_args[s],
                c4_maps[s].shape(),
            );
            grad_samples.push(g);
        }
        let mut grad = stack4(&grad_samples);

        let mut grads: Vec<Vec<f32>> = Vec::new();
        for i in (0..4).rev() {
            if i != 3 {
                // Undo the pool that followed block i (only after block 1).
                if i == 1 {
                    let shape = pool_shapes[0];
                    let args = &pool_argmax[0];
                    let (gn, gh, gw, gc) = grad.dims4();
                    let mut samples = Vec::with_capacity(gn);
                    for s in 0..gn {
                        let g_s = Tensor::from_vec(
                            &[gh, gw, gc],
                            sample4(&grad, s).into_data(),
                        )?;
                        samples.push(crate::ops::maxpool2x2_backward(&g_s, &args[s], &shape));
                    }
                    grad = stack4(&samples);
                }
            }
            let bn_out = &bn_outputs[i];
            let mut grad_pre = vec![0.0f32; grad.len()];
            relu_backward(grad.data(), bn_out.data(), &mut grad_pre);
            let grad_pre = Tensor::from_vec(bn_out.shape(), grad_pre)?;
            let (grad_conv, g_scale, g_shift) =
                batchnorm_backward(&grad_pre, &bn_caches[i], &head.network.conv[i].bn);
            let input = &conv_inputs[i];
            let mut g_w = vec![0.0f32; head.network.conv[i].weights.len()];
            let mut g_b = vec![0.0f32; head.network.conv[i].bias.len()];
            let mut grad_inputs = Vec::with_capacity(n);
            for s in 0..n {
                let (gi, gw, gb) = conv2d_backward(
                    &sample4(input, s),
                    &head.network.conv[i].weights,
                    &sample4(&grad_conv, s),
                )?;
                for (acc, v) in g_w.iter_mut().zip(gw.data()) {
                    *acc += *v;
                }
                for (acc, v) in g_b.iter_mut().zip(&gb) {
                    *acc += *v;
                }
                grad_inputs.push(gi);
            }
            grad = stack4(&grad_inputs);
            grads.push(g_shift);
            grads.push(g_scale);
            grads.push(g_b);
            grads.push(g_w);
        }
        grads.reverse(); // now conv1.w, conv1.b, bn1.scale, bn1.shift, ...

        {
            let net = &mut head.network;
            let mut gi = 0;
            for (bi, block) in net.conv.iter_mut().enumerate() {
                adam_step(block.weights.data_mut(), &grads[gi], &mut states[bi * 4])?;
                adam_step(&mut block.bias, &grads[gi + 1], &mut states[bi * 4 + 1])?;
                adam_step(&mut block.bn.scale, &grads[gi + 2], &mut states[bi * 4 + 2])?;
                adam_step(&mut block.bn.shift, &grads[gi + 3], &mut states[bi * 4 + 3])?;
                gi += 4;
            }
        }
        adam_step(head.v.data_mut(), &grad_v, &mut v_state)?;
        adam_step(&mut head.bias, &grad_b, &mut b_state)?;

        if epoch >= 5 {
            let prev = log.losses[epoch - 5];
            if (prev - log.losses[epoch]).abs() < config.tolerance {
                log.converged_at = Some(epoch);
                break;
            }
        }
    }

    let mut correct = 0usize;
    for (p, &class) in patches.iter().zip(&classes) {
        let logits = head.forward(&p.data)?;
        let pred = if logits[1] > logits[0] { 1 } else { 0 };
        if pred == class {
            correct += 1;
        }
    }
    log.train_accuracy = correct as f64 / patches.len() as f64;
    Ok(log)
}

fn sample4(batch: &Tensor32, s: usize) -> Tensor32 {
    let (_, h, w, c) = batch.dims4();
    let stride = h * w * c;
    Tensor::from_vec(&[h, w, c], batch.data()[s * stride..(s + 1) * stride].to_vec())
        .expect("sample")
}

fn sample4_from_pre_pool(batch: &Tensor32, s: usize) -> Result<Tensor32> {
    Ok(sample4(batch, s))
}

fn stack4(samples: &[Tensor32]) -> Tensor32 {
    let (h, w, c) = samples[0].dims3();
    let mut data = Vec::with_capacity(samples.len() * h * w * c);
    for s in samples {
        data.extend_from_slice(s.data());
    }
    Tensor::from_vec(&[samples.len(), h, w, c], data).expect("stacked")
}

/// Bilinear upsampling of a single-channel map to `size` x `size`.
pub fn bilinear_upsample(map: &Tensor32, size: usize) -> Tensor32 {
    let shape = map.shape();
    let (h, w) = (shape[0], shape[1]);
    let data = map.data();
    let mut out = vec![0.0f32; size * size];
    for y in 0..size {
        let sy = ((y as f32 + 0.5) * h as f32 / size as f32 - 0.5)
            .clamp(0.0, (h - 1) as f32);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f32;
        for x in 0..size {
            let sx = ((x as f32 + 0.5) * w as f32 / size as f32 - 0.5)
                .clamp(0.0, (w - 1) as f32);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f32;
            let v = (1.0 - fy) * ((1.0 - fx) * data[y0 * w + x0] + fx * data[y0 * w + x1])
                + fy * ((1.0 - fx) * data[y1 * w + x0] + fx * data[y1 * w + x1]);
            out[y * size + x] = v;
        }
    }
    Tensor::from_vec(&[size, size], out).expect("upsampled")
}

/// Compute the class activation map for `class` on a patch of size >= the
/// training size. The raw map is the V-weighted sum of C4 feature maps.
pub fn compute_cam(head: &CamHead, patch: &Patch, class: usize) -> Result<CamMap> {
    if class > 1 {
        return Err(Error::Input(format!("class index {} out of range", class)));
    }
    if patch.size < head.network.config.input_size {
        return Err(Error::Input(format!(
            "patch size {} below the trained size {}",
            patch.size, head.network.config.input_size
        )));
    }
    let features = head.network.conv_stack_infer(&patch.data)?;
    let c4_map = &features.conv_maps[3];
    let (h, w, c) = c4_map.dims3();
    let v = head.v.data();
    let mut raw = vec![0.0f32; h * w];
    for pix in 0..h * w {
        let mut acc = 0.0f32;
        for k in 0..c {
            acc += v[k * 2 + class] * c4_map.data()[pix * c + k];
        }
        raw[pix] = acc;
    }
    let raw = Tensor::from_vec(&[h, w], raw)?;

    let upsampled = bilinear_upsample(&raw, patch.size);
    let lo = upsampled.data().iter().copied().fold(f32::INFINITY, f32::min);
    let hi = upsampled
        .data()
        .iter()
        .copied()
        .fold(f32::NEG_INFINITY, f32::max);
    let norm = if hi > lo {
        upsampled.map(|v| (v - lo) / (hi - lo))
    } else {
        upsampled.map(|_| 0.0)
    };
    let raw_lo = raw.data().iter().copied().fold(f32::INFINITY, f32::min);
    let raw_hi = raw.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    Ok(CamMap {
        class,
        raw,
        upsampled: norm,
        range: (raw_lo, raw_hi),
    })
}

/// Training-set metrics of the head on labeled patches.
pub fn head_metrics(head: &CamHead, patches: &[Patch]) -> Result<crate::metrics::MetricsReport> {
    let mut decisions = Vec::with_capacity(patches.len());
    let mut labels = Vec::with_capacity(patches.len());
    for p in patches {
        let logits = head.forward(&p.data)?;
        decisions.push(logits[1] > logits[0]);
        labels.push(p.record.label == Label::Malignant);
    }
    confusion_metrics(&decisions, &labels)
}

/// Persist a CAM head in the checkpoint container (kind `CAM`).
pub fn save_cam_head(head: &CamHead, log: &CamTrainLog, path: &std::path::Path) -> Result<()> {
    let mut ckpt = Checkpoint::new(head.network.clone(), Default::default());
    let mut bytes_container = {
        let container_bytes = ckpt.to_bytes()?;
        crate::model::checkpoint::container_from_reader(container_bytes.as_slice())?
    };
    bytes_container.kind = "CAM".to_string();
    bytes_container.log_json = serde_json::to_string(log)?;
    bytes_container.tensors.push(ContainerTensor {
        name: "cam.v".into(),
        shape: head.v.shape().to_vec(),
        data: head.v.data().to_vec(),
    });
    bytes_container.tensors.push(ContainerTensor {
        name: "cam.bias".into(),
        shape: vec![head.bias.len()],
        data: head.bias.clone(),
    });
    ckpt.log = Default::default();
    crate::model::checkpoint::write_container(path, &bytes_container)
}

/// Load a CAM head saved by [`save_cam_head`].
pub fn load_cam_head(path: &std::path::Path) -> Result<(CamHead, CamTrainLog)> {
    let mut container = crate::model::checkpoint::read_container(path)?;
    if container.kind != "CAM" {
        return Err(Error::Format(format!(
            "expected a CAM container, found kind `{}`",
            container.kind
        )));
    }
    let v_idx = container
        .tensors
        .iter()
        .position(|t| t.name == "cam.v")
        .ok_or_else(|| Error::Format("CAM container lacks cam.v".into()))?;
    let v = container.tensors.remove(v_idx);
    let b_idx = container
        .tensors
        .iter()
        .position(|t| t.name == "cam.bias")
        .ok_or_else(|| Error::Format("CAM container lacks cam.bias".into()))?;
    let bias = container.tensors.remove(b_idx);
    let log: CamTrainLog = serde_json::from_str(&container.log_json)?;
    let cnn_container = Container {
        kind: "CNN".into(),
        config_json: container.config_json,
        log_json: serde_json::to_string(&LogBlockCompat::default())?,
        tensors: container.tensors,
    };
    let ckpt = Checkpoint::from_container(cnn_container)?;
    Ok((
        CamHead {
            network: ckpt.network,
            v: Tensor::from_vec(&v.shape, v.data)?,
            bias: bias.data,
            frozen: true,
        },
        log,
    ))
}

#[derive(Default, Serialize)]
struct LogBlockCompat {
    log: crate::model::TrainingLog,
    adam_t: Option<u64>,
}
