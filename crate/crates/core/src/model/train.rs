//! End-to-end training: single-fold training with best-epoch selection and
//! the k-fold cross-validation driver.

use rayon::prelude::*;

use crate::data::augment::{augment, AugmentPolicy};
use crate::data::folds::stratified_folds;
use crate::data::manifest::{Label, LesionRecord};
use crate::data::patch::Patch;
use crate::data::{original_patches, CaseLibrary};
use crate::error::{Error, Result};
use crate::metrics::{confusion_metrics, roc_auc, MetricsReport};
use crate::model::checkpoint::{Checkpoint, TrainingLog};
use crate::model::{batch_from_patches, ModelConfig, Network};
use crate::ops::{adam_step, softmax_xent, AdamState};
use crate::report::{fingerprint, CvSummary};
use crate::rng::Pcg32;

pub use crate::model::checkpoint::EpochRecord;

pub fn class_index(label: Label) -> usize {
    match label {
        Label::Benign => 0,
        Label::Malignant => 1,
        Label::Unknown => panic!("unknown label has no class index"),
    }
}

fn lesion_overlap(train: &[Patch], val: &[Patch]) -> Option<String> {
    let val_ids: std::collections::BTreeSet<&str> =
        val.iter().map(|p| p.record.lesion_id.as_str()).collect();
    train
        .iter()
        .find(|p| val_ids.contains(p.record.lesion_id.as_str()))
        .map(|p| p.record.lesion_id.clone())
}

/// Hard decisions and malignant scores for a set of patches.
pub fn evaluate_patches(
    network: &Network<f32>,
    patches: &[Patch],
) -> Result<(Vec<bool>, Vec<f64>, Vec<bool>)> {
    let outputs: Vec<(f64, f64)> = patches
        .par_iter()
        .map(|p| network.predict(p))
        .collect::<Result<Vec<_>>>()?;
    let mut decisions = Vec::with_capacity(patches.len());
    let mut scores = Vec::with_capacity(patches.len());
    let mut labels = Vec::with_capacity(patches.len());
    for ((pb, pm), patch) in outputs.iter().zip(patches) {
        decisions.push(pm > pb);
        scores.push(*pm);
        labels.push(patch.record.label == Label::Malignant);
    }
    Ok((decisions, scores, labels))
}

pub fn metrics_for(network: &Network<f32>, patches: &[Patch]) -> Result<MetricsReport> {
    let (decisions, scores, labels) = evaluate_patches(network, patches)?;
    let mut metrics = confusion_metrics(&decisions, &labels)?;
    metrics.auc = roc_auc(&scores, &labels);
    Ok(metrics)
}

/// Train on `train`, selecting the epoch snapshot with the best validation
/// accuracy (earliest among ties). `rng` seeds initialization and the epoch
/// shuffles.
pub fn train_fold(
    train: &[Patch],
    val: &[Patch],
    config: &ModelConfig,
    rng: &Pcg32,
) -> Result<Checkpoint> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Input("training and validation sets must be non-empty".into()));
    }
    if let Some(id) = lesion_overlap(train, val) {
        return Err(Error::Input(format!(
            "lesion {} appears in both training and validation",
            id
        )));
    }

    let mut network = Network::<f32>::build(config, rng)?;
    let mut adam: Vec<AdamState<f32>> = network
        .trainable_params_mut()
        .iter()
        .map(|(_, p)| AdamState::new(p.len(), config.optimizer))
        .collect();

    let mut shuffle_rng = rng.substream("shuffle");
    let classes: Vec<usize> = train
        .iter()
        .map(|p| class_index(p.record.label))
        .collect();

    let mut log = TrainingLog {
        config_fingerprint: fingerprint(config),
        ..Default::default()
    };
    let mut best: Option<(f64, Network<f32>, usize)> = None;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffle_rng.shuffle(&mut order);

        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(config.batch_size.max(1)).enumerate() {
            let members: Vec<&Patch> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = batch_from_patches::<f32>(&members);
            let (logits, cache) = network.forward_train(&batch)?;

            let n = members.len();
            let mut grad_logits = vec![0.0f32; logits.len()];
            let mut loss_sum = 0.0f64;
            for (s, &idx) in chunk.iter().enumerate() {
                let mut target = vec![0.0f32; config.classes];
                target[classes[idx]] = 1.0;
                let row = &logits[s * config.classes..(s + 1) * config.classes];
                let (loss, grad) = softmax_xent(row, &target)?;
                loss_sum += loss as f64;
                for (g, &gv) in grad_logits[s * config.classes..(s + 1) * config.classes]
                    .iter_mut()
                    .zip(&grad)
                {
                    *g = gv / n as f32;
                }
            }
            let mean_loss = loss_sum / n as f64;
            if !mean_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss in epoch {} batch {}",
                    epoch, batch_idx
                )));
            }
            epoch_loss += mean_loss;
            batches += 1;

            let grads = network.backward(&cache, &grad_logits)?;
            for ((_, param), (grad, state)) in network
                .trainable_params_mut()
                .into_iter()
                .zip(grads.iter().zip(adam.iter_mut()))
            {
                adam_step(param, grad, state)?;
            }
        }

        let metrics = metrics_for(&network, val)?;
        log.entries.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / batches.max(1) as f64,
            val_accuracy: metrics.accuracy,
            val_sensitivity: metrics.sensitivity,
            val_specificity: metrics.specificity,
            val_g_mean: metrics.g_mean,
            val_auc: metrics.auc,
        });

        let improved = match &best {
            None => true,
            Some((acc, _, _)) => metrics.accuracy > *acc,
        };
        if improved {
            best = Some((metrics.accuracy, network.clone(), epoch));
        }
    }

    let (network, best_epoch, best_acc) = match best {
        Some((acc, net, epoch)) => (net, Some(epoch), Some(acc)),
        None => (network, None, None),
    };
    log.best_epoch = best_epoch;
    log.best_val_accuracy = best_acc;

    Ok(Checkpoint::new(network, log))
}

#[derive(Debug)]
pub struct FoldOutcome {
    pub fold: usize,
    pub checkpoint: Checkpoint,
    pub metrics: MetricsReport,
    pub val_lesions: Vec<String>,
}

#[derive(Debug)]
pub struct CvResult {
    pub folds: Vec<FoldOutcome>,
    pub summary: CvSummary,
    pub split: crate::data::folds::FoldSplit,
}

/// k-fold cross-validation. Folds are stratified; augmentation happens after
/// the split and only on each fold's training lesions, so no rotated copy of
/// a validation lesion ever reaches training.
pub fn cross_validate(
    lib: &CaseLibrary,
    records: &[LesionRecord],
    config: &ModelConfig,
    k: usize,
    policy: AugmentPolicy,
    rng: &Pcg32,
) -> Result<CvResult> {
    let split = stratified_folds(records, k, rng)?;
    let fold_ids: Vec<usize> = (0..k).collect();
    let outcomes: Vec<FoldOutcome> = fold_ids
        .par_iter()
        .map(|&fold| -> Result<FoldOutcome> {
            let train_records: Vec<LesionRecord> = records
                .iter()
                .filter(|r| split.fold_of(&r.lesion_id) != Some(fold))
                .cloned()
                .collect();
            let val_records: Vec<LesionRecord> = records
                .iter()
                .filter(|r| split.fold_of(&r.lesion_id) == Some(fold))
                .cloned()
                .collect();

            let fold_rng = rng.substream(&format!("fold/{}", fold));
            let train_patches = augment(
                lib,
                &train_records,
                config.input_size,
                &config.channels,
                policy,
                &fold_rng,
            )?;
            let val_patches =
                original_patches(lib, &val_records, config.input_size, &config.channels)?;

            let checkpoint = train_fold(&train_patches, &val_patches, config, &fold_rng)?;
            let mut metrics = metrics_for(&checkpoint.network, &val_patches)?;
            metrics.fold = Some(fold);
            metrics.config_fingerprint = fingerprint(config);
            Ok(FoldOutcome {
                fold,
                checkpoint,
                metrics,
                val_lesions: val_records.iter().map(|r| r.lesion_id.clone()).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let summary = CvSummary::from_folds(
        outcomes.iter().map(|o| o.metrics.clone()).collect(),
        fingerprint(config),
    );
    Ok(CvResult {
        folds: outcomes,
        summary,
        split,
    })
}
