//! Synthetic dataset generator: 3-channel volumes with class-dependent blob
//! contrast, standing in for clinical data in CI and desk-scale runs.
//!
//! Malignant lesions get a strongly hypointense blob on the ADC channel and
//! a hyperintense blob on the DWI channel; benign lesions show the same blob
//! location with much weaker functional contrast. The T2W channel shows the
//! lesion equally for both classes, so it localizes but does not classify.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::manifest::{save_manifest, Label, LesionRecord, Zone};
use crate::data::volume::Volume;
use crate::error::Result;
use crate::rng::Pcg32;

pub const MODALITIES: [&str; 3] = ["T2W", "ADC", "DWI_b50"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    pub lesions: usize,
    /// Fraction of lesions labeled malignant (0.25 mirrors the 1:3 ratio).
    pub malignant_fraction: f64,
    /// Volume extents (D, H, W).
    pub dims: (usize, usize, usize),
    pub seed: u64,
    /// Per-voxel Gaussian noise level.
    pub noise: f64,
    /// Blob contrast per modality [T2W, ADC, DWI_b50] for each class.
    pub malignant_contrast: [f64; 3],
    pub benign_contrast: [f64; 3],
    /// Render the benign DWI structure as an annulus instead of a filled
    /// disc. With equal contrast amplitudes this keeps per-case intensity
    /// ranges class-independent, so per-case normalization leaks no global
    /// brightness cue and the classes differ only in focal shape.
    pub benign_dwi_ring: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            lesions: 320,
            malignant_fraction: 0.25,
            dims: (6, 48, 48),
            seed: 7,
            noise: 0.03,
            malignant_contrast: [-0.20, -0.20, 0.70],
            benign_contrast: [-0.20, -0.20, 0.70],
            benign_dwi_ring: true,
        }
    }
}

/// Ground-truth blob geometry, available to tests but not part of the
/// on-disk dataset.
#[derive(Clone, Debug)]
pub struct BlobTruth {
    pub lesion_id: String,
    pub z: usize,
    pub cy: f64,
    pub cx: f64,
    pub radius: f64,
}

pub struct SynthDataset {
    pub records: Vec<LesionRecord>,
    /// Volumes keyed by the path strings the records reference.
    pub volumes: HashMap<String, Volume>,
    pub truths: Vec<BlobTruth>,
}

pub fn malignant_count(lesions: usize, fraction: f64) -> usize {
    (lesions as f64 * fraction).round() as usize
}

fn volume_path(patient_id: &str, modality: &str) -> String {
    format!("synthetic/{}_{}.mpv", patient_id, modality)
}

pub fn generate(cfg: &SynthConfig) -> SynthDataset {
    let root = Pcg32::new(cfg.seed);
    let n_mal = malignant_count(cfg.lesions, cfg.malignant_fraction);
    let (d, h, w) = cfg.dims;

    let mut records = Vec::with_capacity(cfg.lesions);
    let mut volumes = HashMap::new();
    let mut truths = Vec::with_capacity(cfg.lesions);

    for i in 0..cfg.lesions {
        let label = if i < n_mal {
            Label::Malignant
        } else {
            Label::Benign
        };
        let patient_id = format!("P{:04}", i);
        let lesion_id = format!("L{:04}", i);
        let mut rng = root.substream(&format!("synth/{}", i));

        let zone = if rng.next_f64() < 0.7 { Zone::PZ } else { Zone::CG };
        let cz = d / 2;
        let cy = (h / 2) as f64 + rng.range_f64(-3.0, 3.0);
        let cx = (w / 2) as f64 + rng.range_f64(-3.0, 3.0);
        let radius = rng.range_f64(4.5, 7.5);

        let contrast = match label {
            Label::Malignant => cfg.malignant_contrast,
            _ => cfg.benign_contrast,
        };

        let mut modalities = BTreeMap::new();
        for (m, name) in MODALITIES.iter().enumerate() {
            let path = volume_path(&patient_id, name);
            // DWI: benign lesions show an annular structure, malignant a
            // filled focus. Other modalities are filled discs for both.
            let ring = m == 2 && label == Label::Benign && cfg.benign_dwi_ring;
            let vol = render_volume(cfg, &mut rng, m, cz, cy, cx, radius, contrast[m], ring);
            volumes.insert(path.clone(), vol);
            modalities.insert(name.to_string(), path);
        }

        records.push(LesionRecord {
            patient_id,
            lesion_id: lesion_id.clone(),
            zone,
            label,
            center: [cz as i64, cy.round() as i64, cx.round() as i64],
            modalities,
        });
        truths.push(BlobTruth {
            lesion_id,
            z: cz,
            cy,
            cx,
            radius,
        });
    }

    SynthDataset {
        records,
        volumes,
        truths,
    }
}

#[allow(clippy::too_many_arguments)]
fn render_volume(
    cfg: &SynthConfig,
    rng: &mut Pcg32,
    modality: usize,
    cz: usize,
    cy: f64,
    cx: f64,
    radius: f64,
    contrast: f64,
    ring: bool,
) -> Volume {
    let (d, h, w) = cfg.dims;
    // Tissue fills the frame (as in a pelvic crop), with a soft gland
    // ellipse on top; the lesion blob is the dominant focal structure.
    let base = [0.42, 0.38, 0.30][modality];
    let gland_gain = [0.14, 0.12, 0.06][modality];
    let ramp_y = rng.range_f64(-0.05, 0.05);
    let ramp_x = rng.range_f64(-0.05, 0.05);

    let (gy, gx) = ((h / 2) as f64, (w / 2) as f64);
    let (gry, grx) = (h as f64 * 0.40, w as f64 * 0.42);

    let mut vol = Volume::zeros((d, h, w));
    for z in 0..d {
        // The blob lives on the center slice and fades on its neighbors.
        let zfactor = match (z as i64 - cz as i64).abs() {
            0 => 1.0,
            1 => 0.6,
            _ => 0.0,
        };
        for y in 0..h {
            for x in 0..w {
                let ell = ((y as f64 - gy) / gry).powi(2) + ((x as f64 - gx) / grx).powi(2);
                // Soft gland mask shared by all structures of a case.
                let gland = 1.0 / (1.0 + (8.0 * (ell.sqrt() - 1.0)).exp());
                let mut v = base
                    + gland_gain * gland
                    + gland
                        * (ramp_y * (y as f64 / h as f64 - 0.5)
                            + ramp_x * (x as f64 / w as f64 - 0.5))
                    + cfg.noise * rng.normal_f64();

                if zfactor > 0.0 {
                    let dist = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                    let g = if ring {
                        // Annulus peaking at the blob radius, hollow center.
                        let width = 0.35 * radius;
                        (-(dist - radius).powi(2) / (width * width)).exp()
                    } else {
                        (-2.0 * (dist / radius).powi(2)).exp()
                    };
                    v += contrast * g * zfactor;
                }
                vol.set_voxel(z, y, x, v as f32);
            }
        }
    }
    vol
}

/// Write the dataset under `dir`: volume files plus `manifest.jsonl`.
/// Returns the manifest path.
pub fn write_to_dir(ds: &SynthDataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("synthetic"))?;
    let mut paths: Vec<&String> = ds.volumes.keys().collect();
    paths.sort();
    for path in paths {
        ds.volumes[path].save(&dir.join(path))?;
    }
    let manifest = dir.join("manifest.jsonl");
    save_manifest(&manifest, &ds.records)?;
    Ok(manifest)
}
