//! Per-case intensity normalization.
//!
//! Each modality of a case is scaled independently: T2W first has everything
//! above its 99th percentile clipped to that percentile, then every modality
//! is min-max scaled to [0, 1] over the whole volume.

use std::collections::BTreeMap;

use crate::data::volume::Volume;

/// Modality name whose top percentile is clipped before scaling.
pub const CLIP_MODALITY: &str = "T2W";
pub const CLIP_QUANTILE: f64 = 0.99;

#[derive(Clone, Debug)]
pub struct NormalizedVolume {
    pub volume: Volume,
    /// Set when the input was constant (max == min); the output is all zero.
    pub constant_input: bool,
}

/// Nearest-rank percentile: the q-quantile of `values` is the element at
/// sorted index `ceil(q * n) - 1`.
pub fn percentile(values: &[f32], q: f64) -> f32 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.saturating_sub(1).min(sorted.len() - 1)]
}

fn min_max(values: &[f32]) -> (f32, f32) {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

pub fn normalize_volume(volume: &Volume, clip_top: bool) -> NormalizedVolume {
    let mut data = volume.data().to_vec();
    if clip_top {
        let cap = percentile(&data, CLIP_QUANTILE);
        for v in data.iter_mut() {
            if *v > cap {
                *v = cap;
            }
        }
    }
    let (lo, hi) = min_max(&data);
    if hi <= lo {
        return NormalizedVolume {
            volume: Volume::new(volume.dims(), vec![0.0; data.len()]).expect("same dims"),
            constant_input: true,
        };
    }
    let scale = 1.0 / (hi - lo);
    for v in data.iter_mut() {
        *v = (*v - lo) * scale;
    }
    NormalizedVolume {
        volume: Volume::new(volume.dims(), data).expect("same dims"),
        constant_input: false,
    }
}

/// Normalize every modality of one case independently.
pub fn normalize_case(volumes: &BTreeMap<String, Volume>) -> BTreeMap<String, NormalizedVolume> {
    volumes
        .iter()
        .map(|(name, vol)| {
            let clip = name == CLIP_MODALITY;
            (name.clone(), normalize_volume(vol, clip))
        })
        .collect()
}
