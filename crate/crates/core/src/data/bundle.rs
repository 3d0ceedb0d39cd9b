//! Patch bundles on disk: one 2-D raster file per channel (volume format
//! with D = 1) plus a JSON-lines sidecar carrying the patch metadata.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::manifest::LesionRecord;
use crate::data::patch::{Patch, Provenance};
use crate::data::volume::Volume;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SIDECAR: &str = "patches.jsonl";
pub const RASTER_DIR: &str = "rasters";

#[derive(Serialize, Deserialize)]
struct BundleEntry {
    record: LesionRecord,
    size: usize,
    channels: Vec<String>,
    provenance: Provenance,
    /// One raster path per channel, relative to the bundle directory.
    files: Vec<String>,
}

pub fn write_bundle(dir: &Path, patches: &[Patch]) -> Result<()> {
    std::fs::create_dir_all(dir.join(RASTER_DIR))?;
    let mut sidecar = std::fs::File::create(dir.join(SIDECAR))?;
    for (i, patch) in patches.iter().enumerate() {
        let mut files = Vec::with_capacity(patch.channels.len());
        for (j, channel) in patch.channels.iter().enumerate() {
            let rel = format!("{}/p{:05}_{}.mpv", RASTER_DIR, i, channel);
            let c = patch.channels.len();
            let plane: Vec<f32> = patch
                .data
                .data()
                .iter()
                .skip(j)
                .step_by(c)
                .copied()
                .collect();
            Volume::new((1, patch.size, patch.size), plane)?.save(&dir.join(&rel))?;
            files.push(rel);
        }
        let entry = BundleEntry {
            record: patch.record.clone(),
            size: patch.size,
            channels: patch.channels.clone(),
            provenance: patch.provenance,
            files,
        };
        serde_json::to_writer(&mut sidecar, &entry)?;
        sidecar.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<Vec<Patch>> {
    let sidecar_path = dir.join(SIDECAR);
    let file = std::fs::File::open(&sidecar_path).map_err(|e| {
        Error::Input(format!(
            "cannot open patch bundle sidecar {}: {}",
            sidecar_path.display(),
            e
        ))
    })?;
    let mut patches = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: BundleEntry = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("bundle sidecar line {}: {}", lineno + 1, e))
        })?;
        if entry.files.len() != entry.channels.len() {
            return Err(Error::Format(format!(
                "bundle sidecar line {}: {} files for {} channels",
                lineno + 1,
                entry.files.len(),
                entry.channels.len()
            )));
        }
        let c = entry.channels.len();
        let mut data = vec![0.0f32; entry.size * entry.size * c];
        for (j, rel) in entry.files.iter().enumerate() {
            let vol = Volume::load(&dir.join(rel))?;
            if vol.dims() != (1, entry.size, entry.size) {
                return Err(Error::Format(format!(
                    "raster {} has dims {:?}, expected (1, {}, {})",
                    rel,
                    vol.dims(),
                    entry.size,
                    entry.size
                )));
            }
            for (pix, &v) in vol.data().iter().enumerate() {
                data[pix * c + j] = v;
            }
        }
        patches.push(Patch::new(
            entry.channels,
            entry.size,
            Tensor::from_vec(&[entry.size, entry.size, c], data)?,
            entry.record,
            entry.provenance,
        )?);
    }
    Ok(patches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CaseLibrary;
    use crate::synth;

    #[test]
    fn bundle_round_trips_patches() {
        let cfg = synth::SynthConfig {
            lesions: 4,
            seed: 3,
            ..Default::default()
        };
        let ds = synth::generate(&cfg);
        let lib = CaseLibrary::from_raw(ds.volumes, &ds.records).unwrap();
        let channels = vec!["T2W".to_string(), "ADC".to_string()];
        let patches: Vec<Patch> = ds
            .records
            .iter()
            .map(|r| crate::data::patch::extract_patch(&lib, r, 32, &channels).unwrap())
            .collect();

        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), &patches).unwrap();
        let back = read_bundle(dir.path()).unwrap();
        assert_eq!(back.len(), patches.len());
        for (a, b) in patches.iter().zip(&back) {
            assert_eq!(a.record, b.record);
            assert_eq!(a.channels, b.channels);
            assert_eq!(a.provenance, b.provenance);
            assert_eq!(a.data.data(), b.data.data());
        }
    }
}
