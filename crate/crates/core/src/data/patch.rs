//! Fixed-size axial patch extraction and rotation-based resampling.
//!
//! A patch is the S x S window around the lesion point on the axial slice at
//! the lesion's z coordinate, with channels stacked in the configured
//! modality order. Windows that would fall off the volume are shifted
//! minimally to fit; volumes smaller than the window fall back to reflected
//! sampling. Rotation resamples a (S+8) x (S+8) context window bilinearly
//! and center-crops, which keeps rotation fill artifacts out of the corners
//! for the small angles the augmentation policies use.

use serde::{Deserialize, Serialize};

use crate::data::manifest::LesionRecord;
use crate::data::CaseLibrary;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Tensor32;

pub const PATCH_SIZES: [usize; 4] = [30, 32, 34, 64];
pub const ROTATION_CONTEXT_MARGIN: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Original,
    Rotated { angle_deg: f64 },
}

#[derive(Clone, Debug)]
pub struct Patch {
    pub channels: Vec<String>,
    pub size: usize,
    /// S x S x C raster of normalized intensities.
    pub data: Tensor32,
    pub record: LesionRecord,
    pub provenance: Provenance,
}

impl Patch {
    pub fn new(
        channels: Vec<String>,
        size: usize,
        data: Tensor32,
        record: LesionRecord,
        provenance: Provenance,
    ) -> Result<Self> {
        if !PATCH_SIZES.contains(&size) {
            return Err(Error::Config(format!(
                "patch size {} not in supported set {:?}",
                size, PATCH_SIZES
            )));
        }
        if data.shape() != [size, size, channels.len()] {
            return Err(Error::Shape(format!(
                "patch data shape {:?} does not match size {} x {} channels",
                data.shape(),
                size,
                channels.len()
            )));
        }
        Ok(Patch {
            channels,
            size,
            data,
            record,
            provenance,
        })
    }
}

/// Symmetric reflection of an index into `[0, n)`.
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let mut j = i % period;
    if j < 0 {
        j += period;
    }
    if j >= n {
        j = period - 1 - j;
    }
    j as usize
}

/// Start of the length-`size` window centered on `center`, shifted minimally
/// to fit inside `[0, extent)`. `None` when the volume is too small and the
/// caller must reflect.
fn window_start(center: i64, size: usize, extent: usize) -> Option<i64> {
    if extent < size {
        return None;
    }
    let start = center - (size / 2) as i64;
    Some(start.clamp(0, (extent - size) as i64))
}

/// Extract one channel's `size` x `size` raster from the axial slice at `z`.
fn extract_plane(
    vol: &crate::data::volume::Volume,
    z: usize,
    cy: i64,
    cx: i64,
    size: usize,
) -> Vec<f32> {
    let (_, h, w) = vol.dims();
    let ys = window_start(cy, size, h);
    let xs = window_start(cx, size, w);
    let mut out = Vec::with_capacity(size * size);
    for dy in 0..size as i64 {
        let y = match ys {
            Some(start) => (start + dy) as usize,
            None => reflect(cy - (size / 2) as i64 + dy, h),
        };
        for dx in 0..size as i64 {
            let x = match xs {
                Some(start) => (start + dx) as usize,
                None => reflect(cx - (size / 2) as i64 + dx, w),
            };
            out.push(vol.voxel(z, y, x));
        }
    }
    out
}

fn validate_center(record: &LesionRecord, vol: &crate::data::volume::Volume, modality: &str) -> Result<()> {
    let [z, y, x] = record.center;
    if !vol.contains(z, y, x) {
        return Err(Error::Input(format!(
            "lesion {} center {:?} lies outside the {} volume of dims {:?}",
            record.lesion_id,
            record.center,
            modality,
            vol.dims()
        )));
    }
    Ok(())
}

fn gather_planes(
    lib: &CaseLibrary,
    record: &LesionRecord,
    size: usize,
    channels: &[String],
) -> Result<Vec<Vec<f32>>> {
    let [z, cy, cx] = record.center;
    let mut planes = Vec::with_capacity(channels.len());
    for name in channels {
        let nv = lib.get(record, name)?;
        validate_center(record, &nv.volume, name)?;
        planes.push(extract_plane(&nv.volume, z as usize, cy, cx, size));
    }
    Ok(planes)
}

fn stack_planes(planes: &[Vec<f32>], size: usize) -> Tensor32 {
    let c = planes.len();
    let mut data = vec![0.0f32; size * size * c];
    for (j, plane) in planes.iter().enumerate() {
        for (pix, &v) in plane.iter().enumerate() {
            data[pix * c + j] = v;
        }
    }
    Tensor::from_vec(&[size, size, c], data).expect("stacked plane volume")
}

/// Extract the original (unrotated) patch for a record.
pub fn extract_patch(
    lib: &CaseLibrary,
    record: &LesionRecord,
    size: usize,
    channels: &[String],
) -> Result<Patch> {
    if size % 2 != 0 {
        return Err(Error::Config(format!("patch size {} must be even", size)));
    }
    let planes = gather_planes(lib, record, size, channels)?;
    Patch::new(
        channels.to_vec(),
        size,
        stack_planes(&planes, size),
        record.clone(),
        Provenance::Original,
    )
}

/// Bilinear sample with clamp-to-border extrapolation.
fn bilinear(plane: &[f32], n: usize, sy: f64, sx: f64) -> f32 {
    let y0 = sy.floor();
    let x0 = sx.floor();
    let fy = (sy - y0) as f32;
    let fx = (sx - x0) as f32;
    let clamp = |v: f64| -> usize { (v.max(0.0) as usize).min(n - 1) };
    let (y0i, y1i) = (clamp(y0), clamp(y0 + 1.0));
    let (x0i, x1i) = (clamp(x0), clamp(x0 + 1.0));
    let v00 = plane[y0i * n + x0i];
    let v01 = plane[y0i * n + x1i];
    let v10 = plane[y1i * n + x0i];
    let v11 = plane[y1i * n + x1i];
    (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11)
}

/// Extract a patch rotated by `angle_deg` around the lesion point.
pub fn rotate_patch(
    lib: &CaseLibrary,
    record: &LesionRecord,
    size: usize,
    channels: &[String],
    angle_deg: f64,
) -> Result<Patch> {
    if size % 2 != 0 {
        return Err(Error::Config(format!("patch size {} must be even", size)));
    }
    let ctx = size + ROTATION_CONTEXT_MARGIN;
    let context_planes = gather_planes(lib, record, ctx, channels)?;

    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let center = (ctx as f64 - 1.0) / 2.0;
    let margin = (ROTATION_CONTEXT_MARGIN / 2) as f64;

    let mut planes = Vec::with_capacity(channels.len());
    for context in &context_planes {
        let mut plane = Vec::with_capacity(size * size);
        for yd in 0..size {
            for xd in 0..size {
                let dy = yd as f64 + margin - center;
                let dx = xd as f64 + margin - center;
                let sx = center + cos * dx - sin * dy;
                let sy = center + sin * dx + cos * dy;
                plane.push(bilinear(context, ctx, sy, sx));
            }
        }
        planes.push(plane);
    }
    Patch::new(
        channels.to_vec(),
        size,
        stack_planes(&planes, size),
        record.clone(),
        Provenance::Rotated { angle_deg },
    )
}
