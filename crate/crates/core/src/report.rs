//! Run reports: config fingerprints, JSON/text/CSV table rendering, and the
//! per-run artifact manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::metrics::MetricsReport;

/// Hex SHA-256 of a value's canonical JSON; identifies a configuration.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{:02x}", b)).collect()
}

/// Average row of a cross-validation summary: plain means of the per-fold
/// values (the mean of per-fold G-means, not the G-mean of means).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub sensitivity: f64,
    pub specificity: f64,
    pub g_mean: f64,
    pub accuracy: f64,
    pub auc: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CvSummary {
    pub per_fold: Vec<MetricsReport>,
    pub average: AverageRow,
    pub config_fingerprint: String,
}

impl CvSummary {
    pub fn from_folds(per_fold: Vec<MetricsReport>, config_fingerprint: String) -> Self {
        let n = per_fold.len().max(1) as f64;
        let mut avg = AverageRow::default();
        for m in &per_fold {
            avg.sensitivity += m.sensitivity / n;
            avg.specificity += m.specificity / n;
            avg.g_mean += m.g_mean / n;
            avg.accuracy += m.accuracy / n;
            avg.auc += m.auc / n;
        }
        CvSummary {
            per_fold,
            average: avg,
            config_fingerprint,
        }
    }

    /// Aligned-column text table, values rounded to two decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("fold  sens  spec  gmean  acc   auc\n");
        for m in &self.per_fold {
            out.push_str(&format!(
                "{:<5} {:<5.2} {:<5.2} {:<6.2} {:<5.2} {:<5.2}\n",
                m.fold.map(|f| (f + 1).to_string()).unwrap_or_else(|| "-".into()),
                m.sensitivity,
                m.specificity,
                m.g_mean,
                m.accuracy,
                m.auc
            ));
        }
        let a = &self.average;
        out.push_str(&format!(
            "avg   {:<5.2} {:<5.2} {:<6.2} {:<5.2} {:<5.2}\n",
            a.sensitivity, a.specificity, a.g_mean, a.accuracy, a.auc
        ));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,tp,fp,tn,fn,sensitivity,specificity,g_mean,accuracy,auc\n");
        for m in &self.per_fold {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                m.fold.map(|f| (f + 1).to_string()).unwrap_or_else(|| "-".into()),
                m.tp,
                m.fp,
                m.tn,
                m.fn_,
                m.sensitivity,
                m.specificity,
                m.g_mean,
                m.accuracy,
                m.auc
            ));
        }
        let a = &self.average;
        out.push_str(&format!(
            "avg,,,,,{},{},{},{},{}\n",
            a.sensitivity, a.specificity, a.g_mean, a.accuracy, a.auc
        ));
        out
    }
}

/// Written into every run's output directory: what produced which files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_fingerprint: String,
    /// The fully resolved configuration, for reproducing the run.
    pub config: serde_json::Value,
    pub artifacts: Vec<String>,
}

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

pub fn write_run_manifest(out_dir: &Path, manifest: &RunManifest) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(RUN_MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    std::fs::write(&path, json)?;
    Ok(path)
}
