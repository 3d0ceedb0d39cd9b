//! Modality-combination sweep: one model per combination on a shared fold
//! split, reporting validation metrics per row.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::augment::{augment, AugmentPolicy};
use crate::data::folds::stratified_folds;
use crate::data::manifest::LesionRecord;
use crate::data::{original_patches, CaseLibrary};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{train_fold, ModelConfig};
use crate::report::fingerprint;
use crate::rng::Pcg32;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub combo: Vec<String>,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub validation_fold: usize,
    pub config_fingerprint: String,
}

impl SweepTable {
    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.combo.join("+").len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = format!("{:<w$}  sens  spec  gmean  auc\n", "combo", w = width);
        for row in &self.rows {
            out.push_str(&format!(
                "{:<w$}  {:<5.2} {:<5.2} {:<6.2} {:<5.2}\n",
                row.combo.join("+"),
                row.metrics.sensitivity,
                row.metrics.specificity,
                row.metrics.g_mean,
                row.metrics.auc,
                w = width
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("combo,sensitivity,specificity,g_mean,auc\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.combo.join("+"),
                row.metrics.sensitivity,
                row.metrics.specificity,
                row.metrics.g_mean,
                row.metrics.auc
            ));
        }
        out
    }
}

/// Train one model per modality combination on the shared split and report
/// metrics on the designated validation fold.
#[allow(clippy::too_many_arguments)]
pub fn modality_sweep(
    lib: &CaseLibrary,
    records: &[LesionRecord],
    combos: &[Vec<String>],
    base_config: &ModelConfig,
    k: usize,
    validation_fold: usize,
    policy: AugmentPolicy,
    rng: &Pcg32,
) -> Result<SweepTable> {
    if combos.is_empty() {
        return Err(Error::Config("sweep needs at least one combination".into()));
    }
    for combo in combos {
        if combo.is_empty() {
            return Err(Error::Config("empty modality combination".into()));
        }
        for record in records {
            for modality in combo {
                if !record.modalities.contains_key(modality) {
                    return Err(Error::MissingModality {
                        modality: modality.clone(),
                        lesion: record.lesion_id.clone(),
                    });
                }
            }
        }
    }
    if validation_fold >= k {
        return Err(Error::Config(format!(
            "validation fold {} out of range for k = {}",
            validation_fold, k
        )));
    }

    // One split, shared by every combination.
    let split = stratified_folds(records, k, rng)?;
    let train_records: Vec<LesionRecord> = records
        .iter()
        .filter(|r| split.fold_of(&r.lesion_id) != Some(validation_fold))
        .cloned()
        .collect();
    let val_records: Vec<LesionRecord> = records
        .iter()
        .filter(|r| split.fold_of(&r.lesion_id) == Some(validation_fold))
        .cloned()
        .collect();

    let rows: Vec<SweepRow> = combos
        .par_iter()
        .map(|combo| -> Result<SweepRow> {
            let mut config = base_config.clone();
            config.channels = combo.clone();
            let combo_rng = rng.substream(&format!("sweep/{}", combo.join("+")));
            let train_patches = augment(
                lib,
                &train_records,
                config.input_size,
                combo,
                policy,
                &combo_rng,
            )?;
            let val_patches = original_patches(lib, &val_records, config.input_size, combo)?;
            let checkpoint = train_fold(&train_patches, &val_patches, &config, &combo_rng)?;
            let mut metrics =
                crate::model::train::metrics_for(&checkpoint.network, &val_patches)?;
            metrics.fold = Some(validation_fold);
            metrics.config_fingerprint = fingerprint(&config);
            Ok(SweepRow {
                combo: combo.clone(),
                metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SweepTable {
        rows,
        validation_fold,
        config_fingerprint: fingerprint(base_config),
    })
}
