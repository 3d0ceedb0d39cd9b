//! Feature-map visualization: per-layer channel-mean maps.

use crate::data::patch::Patch;
use crate::data::volume::Volume;
use crate::error::Result;
use crate::model::Network;
use crate::tensor::Tensor;
use crate::Tensor32;

/// Elementwise mean across channels of each conv block's post-ReLU maps.
pub fn average_feature_maps(network: &Network<f32>, patch: &Patch) -> Result<Vec<Tensor32>> {
    let features = network.conv_stack_infer(&patch.data)?;
    let mut out = Vec::with_capacity(4);
    for map in &features.conv_maps {
        let (h, w, c) = map.dims3();
        let mut mean = vec![0.0f32; h * w];
        for (pix, row) in map.data().chunks(c).enumerate() {
            mean[pix] = row.iter().sum::<f32>() / c as f32;
        }
        out.push(Tensor::from_vec(&[h, w], mean)?);
    }
    Ok(out)
}

/// A single-channel map as a volume file raster (D = 1).
pub fn map_to_volume(map: &Tensor32) -> Result<Volume> {
    let shape = map.shape();
    Volume::new((1, shape[0], shape[1]), map.data().to_vec())
}

/// Min-max normalize a map to [0,1] for display; constant maps become zero.
pub fn display_normalize(map: &Tensor32) -> Tensor32 {
    let lo = map.data().iter().copied().fold(f32::INFINITY, f32::min);
    let hi = map.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if hi > lo {
        map.map(|v| (v - lo) / (hi - lo))
    } else {
        map.map(|_| 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::{Label, LesionRecord, Zone};
    use crate::data::patch::Provenance;
    use crate::model::ModelConfig;
    use crate::rng::Pcg32;
    use std::collections::BTreeMap;

    fn tiny_network_and_patch() -> (Network<f32>, Patch) {
        let config = ModelConfig {
            input_size: 32,
            channels: vec!["A".into()],
            conv_widths: [2, 2, 3, 3],
            fc_widths: [8, 4],
            seed: 21,
            ..Default::default()
        };
        let network = Network::build(&config, &Pcg32::new(21)).unwrap();
        let mut rng = Pcg32::new(33);
        let data: Vec<f32> = (0..32 * 32).map(|_| rng.next_f64() as f32).collect();
        let record = LesionRecord {
            patient_id: "p".into(),
            lesion_id: "l".into(),
            zone: Zone::PZ,
            label: Label::Benign,
            center: [0, 16, 16],
            modalities: BTreeMap::new(),
        };
        let patch = Patch::new(
            vec!["A".into()],
            32,
            Tensor::from_vec(&[32, 32, 1], data).unwrap(),
            record,
            Provenance::Original,
        )
        .unwrap();
        (network, patch)
    }

    #[test]
    fn matches_explicit_per_pixel_averaging() {
        let (network, patch) = tiny_network_and_patch();
        let means = average_feature_maps(&network, &patch).unwrap();
        let features = network.conv_stack_infer(&patch.data).unwrap();
        for (mean, map) in means.iter().zip(&features.conv_maps) {
            let (h, w, c) = map.dims3();
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0f32;
                    for ch in 0..c {
                        acc += map.get3(y, x, ch);
                    }
                    acc /= c as f32;
                    let got = mean.data()[y * w + x];
                    assert!((got - acc).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn mean_of_opposite_maps_is_zero() {
        // Direct check of the averaging rule on a synthetic two-channel map.
        let mut data = vec![0.0f32; 4 * 4 * 2];
        for pix in 0..16 {
            data[pix * 2] = pix as f32;
            data[pix * 2 + 1] = -(pix as f32);
        }
        let map = Tensor::from_vec(&[4, 4, 2], data).unwrap();
        let (h, w, c) = map.dims3();
        let mut mean = vec![0.0f32; h * w];
        for (pix, row) in map.data().chunks(c).enumerate() {
            mean[pix] = row.iter().sum::<f32>() / c as f32;
        }
        assert!(mean.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn display_normalize_handles_constant_maps() {
        let map = Tensor::filled(&[3, 3], 2.0f32);
        let norm = display_normalize(&map);
        assert!(norm.data().iter().all(|&v| v == 0.0));
    }
}
