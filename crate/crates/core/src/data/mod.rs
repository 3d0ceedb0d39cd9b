//! Data pipeline: manifests, volumes, normalization, patch extraction,
//! augmentation and fold assignment.

pub mod augment;
pub mod bundle;
pub mod folds;
pub mod manifest;
pub mod normalize;
pub mod patch;
pub mod volume;

use std::collections::HashMap;
use std::path::Path;

pub use augment::{augment, augment_policy1, augment_policy2, AugmentPolicy};
pub use folds::{stratified_folds, FoldSplit};
pub use manifest::{load_manifest, save_manifest, Label, LesionRecord, Zone};
pub use normalize::{normalize_case, normalize_volume, NormalizedVolume};
pub use patch::{extract_patch, rotate_patch, Patch, Provenance};
pub use volume::Volume;

use crate::error::{Error, Result};

/// Normalized volumes for every (modality, path) a set of records references.
///
/// Volumes are loaded and normalized eagerly, so the library is read-only
/// afterwards and safe to share across threads.
pub struct CaseLibrary {
    by_path: HashMap<String, NormalizedVolume>,
}

impl CaseLibrary {
    /// Load every volume referenced by `records` from disk, resolving
    /// relative paths against `base`.
    pub fn load(records: &[LesionRecord], base: &Path) -> Result<Self> {
        let mut by_path = HashMap::new();
        for record in records {
            for (modality, path) in &record.modalities {
                if by_path.contains_key(path) {
                    continue;
                }
                let full = base.join(path);
                let raw = Volume::load(&full).map_err(|_| Error::MissingModality {
                    modality: modality.clone(),
                    lesion: record.lesion_id.clone(),
                })?;
                by_path.insert(
                    path.clone(),
                    normalize::normalize_volume(&raw, modality == normalize::CLIP_MODALITY),
                );
            }
        }
        Ok(CaseLibrary { by_path })
    }

    /// Build from in-memory volumes keyed by the path strings the records
    /// reference.
    pub fn from_raw(raw: HashMap<String, Volume>, records: &[LesionRecord]) -> Result<Self> {
        let mut by_path = HashMap::new();
        for record in records {
            for (modality, path) in &record.modalities {
                if by_path.contains_key(path) {
                    continue;
                }
                let vol = raw.get(path).ok_or_else(|| Error::MissingModality {
                    modality: modality.clone(),
                    lesion: record.lesion_id.clone(),
                })?;
                by_path.insert(
                    path.clone(),
                    normalize::normalize_volume(vol, modality == normalize::CLIP_MODALITY),
                );
            }
        }
        Ok(CaseLibrary { by_path })
    }

    pub fn get(&self, record: &LesionRecord, modality: &str) -> Result<&NormalizedVolume> {
        let path = record
            .modalities
            .get(modality)
            .ok_or_else(|| Error::MissingModality {
                modality: modality.to_string(),
                lesion: record.lesion_id.clone(),
            })?;
        self.by_path
            .get(path)
            .ok_or_else(|| Error::MissingModality {
                modality: modality.to_string(),
                lesion: record.lesion_id.clone(),
            })
    }
}

/// Original (unaugmented) patches for a list of records.
pub fn original_patches(
    lib: &CaseLibrary,
    records: &[LesionRecord],
    size: usize,
    channels: &[String],
) -> Result<Vec<Patch>> {
    records
        .iter()
        .map(|r| extract_patch(lib, r, size, channels))
        .collect()
}
