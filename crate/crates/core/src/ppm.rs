//! Binary PPM (P6) rendering: grayscale rasters and red-heat CAM overlays.

use std::path::Path;

use crate::error::{Error, Result};
use crate::Tensor32;

fn to_byte(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// P6 header + RGB payload for an S x S image.
pub fn render_rgb(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", width, height).into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Grayscale raster (values in [0,1]) as P6.
pub fn render_gray(map: &Tensor32) -> Vec<u8> {
    let shape = map.shape();
    let (h, w) = (shape[0], shape[1]);
    let mut rgb = Vec::with_capacity(h * w * 3);
    for &v in map.data() {
        let b = to_byte(v);
        rgb.extend_from_slice(&[b, b, b]);
    }
    render_rgb(w, h, &rgb)
}

/// Gray base image with a red-heat overlay: each pixel blends toward pure
/// red with weight `alpha * cam`, so a zero map leaves pure grayscale.
pub fn render_overlay(base: &[f32], cam: &[f32], size: usize, alpha: f32) -> Result<Vec<u8>> {
    if base.len() != size * size || cam.len() != size * size {
        return Err(Error::Shape(format!(
            "overlay rasters must both be {0}x{0}",
            size
        )));
    }
    let mut rgb = Vec::with_capacity(size * size * 3);
    for (&g, &c) in base.iter().zip(cam) {
        let w = (alpha * c).clamp(0.0, 1.0);
        let r = (1.0 - w) * g + w;
        let gb = (1.0 - w) * g;
        rgb.push(to_byte(r));
        rgb.push(to_byte(gb));
        rgb.push(to_byte(gb));
    }
    Ok(render_rgb(size, size, &rgb))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {}", path.display(), e))))
}

/// First channel of a patch as the grayscale plane.
pub fn patch_base_plane(patch: &crate::data::patch::Patch) -> Vec<f32> {
    let (h, w, c) = patch.data.dims3();
    let mut out = Vec::with_capacity(h * w);
    for pix in 0..h * w {
        out.push(patch.data.data()[pix * c]);
    }
    out
}
