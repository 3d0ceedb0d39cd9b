//! Lesion manifest: one JSON record per line.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Zone {
    PZ,
    CG,
    #[serde(rename = "other")]
    Other,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Malignant,
    Benign,
    Unknown,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Malignant => write!(f, "malignant"),
            Label::Benign => write!(f, "benign"),
            Label::Unknown => write!(f, "unknown"),
        }
    }
}

/// One lesion finding: identity, zone, label, the (z, y, x) voxel location
/// of the lesion point in the reference frame, and per-modality volume
/// paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionRecord {
    pub patient_id: String,
    pub lesion_id: String,
    pub zone: Zone,
    pub label: Label,
    pub center: [i64; 3],
    pub modalities: BTreeMap<String, String>,
}

/// Load a JSON-lines manifest. Records labeled `unknown` are rejected unless
/// `allow_unknown` is set (test manifests may carry them).
pub fn load_manifest(path: &Path, allow_unknown: bool) -> Result<Vec<LesionRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Input(format!("cannot open manifest {}: {}", path.display(), e)))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LesionRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!(
                "manifest {} line {}: {}",
                path.display(),
                lineno + 1,
                e
            ))
        })?;
        if record.label == Label::Unknown && !allow_unknown {
            return Err(Error::Input(format!(
                "lesion {} has label `unknown`, which is only permitted in test manifests",
                record.lesion_id
            )));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn save_manifest(path: &Path, records: &[LesionRecord]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for record in records {
        serde_json::to_writer(&mut file, record)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}
