//! Stratified cross-validation fold assignment.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::manifest::{Label, LesionRecord};
use crate::error::{Error, Result};
use crate::rng::Pcg32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    /// lesion_id -> fold index.
    pub assignment: BTreeMap<String, usize>,
}

impl FoldSplit {
    pub fn fold_of(&self, lesion_id: &str) -> Option<usize> {
        self.assignment.get(lesion_id).copied()
    }

    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Input(format!("cannot open folds {}: {}", path.display(), e)))?;
        Ok(serde_json::from_reader(file)?)
    }
}

/// Assign lesions to `k` folds, stratified by label: each class is shuffled
/// and dealt round-robin, so per-class fold counts differ by at most one.
pub fn stratified_folds(records: &[LesionRecord], k: usize, rng: &Pcg32) -> Result<FoldSplit> {
    if k == 0 {
        return Err(Error::Config("fold count k must be positive".into()));
    }
    let mut by_class: BTreeMap<Label, Vec<&str>> = BTreeMap::new();
    let mut seen = std::collections::BTreeSet::new();
    for record in records {
        if record.label == Label::Unknown {
            return Err(Error::Input(format!(
                "cannot stratify unlabeled lesion {}",
                record.lesion_id
            )));
        }
        if !seen.insert(record.lesion_id.as_str()) {
            return Err(Error::Input(format!(
                "duplicate lesion id {} in fold input",
                record.lesion_id
            )));
        }
        by_class
            .entry(record.label)
            .or_default()
            .push(&record.lesion_id);
    }
    for (label, ids) in &by_class {
        if ids.len() < k {
            return Err(Error::Config(format!(
                "class {} has {} lesions, fewer than k = {}",
                label,
                ids.len(),
                k
            )));
        }
    }
    let mut shuffle_rng = rng.substream("folds");
    let mut assignment = BTreeMap::new();
    for (_, mut ids) in by_class {
        shuffle_rng.shuffle(&mut ids);
        for (i, id) in ids.into_iter().enumerate() {
            assignment.insert(id.to_string(), i % k);
        }
    }
    Ok(FoldSplit { k, assignment })
}
