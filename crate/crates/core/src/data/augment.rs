//! The two rotation-based augmentation policies.
//!
//! Policy 1 rotates only malignant lesions, at exactly 2, 4 and 6 degrees.
//! Policy 2 rotates benign lesions 5 times and malignant lesions 19 times at
//! angles drawn uniformly from (-180, 180]. Both keep the original patch, so
//! per lesion the yields are benign/malignant 1/4 (policy 1) and 6/20
//! (policy 2).

use serde::{Deserialize, Serialize};

use crate::data::manifest::{Label, LesionRecord};
use crate::data::patch::{extract_patch, rotate_patch, Patch};
use crate::data::CaseLibrary;
use crate::error::{Error, Result};
use crate::rng::Pcg32;

pub const POLICY1_ANGLES: [f64; 3] = [2.0, 4.0, 6.0];
pub const POLICY2_BENIGN_ROTATIONS: usize = 5;
pub const POLICY2_MALIGNANT_ROTATIONS: usize = 19;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugmentPolicy {
    #[serde(rename = "policy1")]
    Policy1,
    #[serde(rename = "policy2")]
    Policy2,
}

fn require_labeled(record: &LesionRecord) -> Result<()> {
    if record.label == Label::Unknown {
        return Err(Error::Input(format!(
            "augmentation requires labeled records; lesion {} is `unknown`",
            record.lesion_id
        )));
    }
    Ok(())
}

pub fn augment_policy1(
    lib: &CaseLibrary,
    records: &[LesionRecord],
    size: usize,
    channels: &[String],
) -> Result<Vec<Patch>> {
    let mut patches = Vec::new();
    for record in records {
        require_labeled(record)?;
        patches.push(extract_patch(lib, record, size, channels)?);
        if record.label == Label::Malignant {
            for angle in POLICY1_ANGLES {
                patches.push(rotate_patch(lib, record, size, channels, angle)?);
            }
        }
    }
    Ok(patches)
}

pub fn augment_policy2(
    lib: &CaseLibrary,
    records: &[LesionRecord],
    size: usize,
    channels: &[String],
    rng: &Pcg32,
) -> Result<Vec<Patch>> {
    let mut patches = Vec::new();
    for record in records {
        require_labeled(record)?;
        patches.push(extract_patch(lib, record, size, channels)?);
        let rotations = match record.label {
            Label::Malignant => POLICY2_MALIGNANT_ROTATIONS,
            Label::Benign => POLICY2_BENIGN_ROTATIONS,
            Label::Unknown => unreachable!(),
        };
        // Per-lesion substream: draws do not depend on record order.
        let mut lesion_rng = rng.substream(&format!("aug2/{}", record.lesion_id));
        for _ in 0..rotations {
            let angle = 180.0 - 360.0 * lesion_rng.next_f64(); // (-180, 180]
            patches.push(rotate_patch(lib, record, size, channels, angle)?);
        }
    }
    Ok(patches)
}

pub fn augment(
    lib: &CaseLibrary,
    records: &[LesionRecord],
    size: usize,
    channels: &[String],
    policy: AugmentPolicy,
    rng: &Pcg32,
) -> Result<Vec<Patch>> {
    match policy {
        AugmentPolicy::Policy1 => augment_policy1(lib, records, size, channels),
        AugmentPolicy::Policy2 => augment_policy2(lib, records, size, channels, rng),
    }
}
