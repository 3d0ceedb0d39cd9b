//! Binary volume file format: magic `MPV1`, three u32 little-endian extents
//! (D, H, W), then D*H*W f32 little-endian voxels, z-major row-major.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MPV1";

#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: (usize, usize, usize), // (D, H, W)
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: (usize, usize, usize), data: Vec<f32>) -> Result<Self> {
        let (d, h, w) = dims;
        if d * h * w != data.len() {
            return Err(Error::Shape(format!(
                "volume dims {:?} require {} voxels, got {}",
                dims,
                d * h * w,
                data.len()
            )));
        }
        Ok(Volume { dims, data })
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        let (d, h, w) = dims;
        Volume {
            dims,
            data: vec![0.0; d * h * w],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn voxel(&self, z: usize, y: usize, x: usize) -> f32 {
        let (_, h, w) = self.dims;
        self.data[(z * h + y) * w + x]
    }

    #[inline]
    pub fn set_voxel(&mut self, z: usize, y: usize, x: usize, v: f32) {
        let (_, h, w) = self.dims;
        self.data[(z * h + y) * w + x] = v;
    }

    pub fn contains(&self, z: i64, y: i64, x: i64) -> bool {
        let (d, h, w) = self.dims;
        (0..d as i64).contains(&z) && (0..h as i64).contains(&y) && (0..w as i64).contains(&x)
    }

    pub fn write_to(&self, mut writer: impl Write) -> Result<()> {
        writer.write_all(MAGIC)?;
        let (d, h, w) = self.dims;
        for extent in [d, h, w] {
            let v = u32::try_from(extent)
                .map_err(|_| Error::Format(format!("extent {} exceeds u32", extent)))?;
            writer.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        writer.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut reader: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "bad volume magic {:?}, expected {:?}",
                magic, MAGIC
            )));
        }
        let mut extents = [0usize; 3];
        for e in extents.iter_mut() {
            let mut b = [0u8; 4];
            reader.read_exact(&mut b)?;
            *e = u32::from_le_bytes(b) as usize;
        }
        let (d, h, w) = (extents[0], extents[1], extents[2]);
        let n = d * h * w;
        let mut payload = vec![0u8; n * 4];
        reader.read_exact(&mut payload).map_err(|_| {
            Error::Format(format!(
                "volume payload truncated: need {} bytes for dims {:?}",
                n * 4,
                (d, h, w)
            ))
        })?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Volume {
            dims: (d, h, w),
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Input(format!("cannot open volume {}: {}", path.display(), e)))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let vol = Volume::new((1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut bytes = Vec::new();
        vol.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[0..4], b"MPV1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 4 * 4);
    }

    #[test]
    fn round_trip_preserves_bits() {
        let data: Vec<f32> = (0..24).map(|v| (v as f32).sin()).collect();
        let vol = Volume::new((2, 3, 4), data).unwrap();
        let mut bytes = Vec::new();
        vol.write_to(&mut bytes).unwrap();
        let back = Volume::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, vol);
    }

    #[test]
    fn truncated_payload_is_a_format_error() {
        let vol = Volume::new((1, 2, 2), vec![0.0; 4]).unwrap();
        let mut bytes = Vec::new();
        vol.write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        let err = Volume::read_from(bytes.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn z_major_row_major_indexing() {
        let data: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let vol = Volume::new((2, 2, 3), data).unwrap();
        assert_eq!(vol.voxel(0, 0, 0), 0.0);
        assert_eq!(vol.voxel(0, 0, 2), 2.0);
        assert_eq!(vol.voxel(0, 1, 0), 3.0);
        assert_eq!(vol.voxel(1, 0, 0), 6.0);
        assert_eq!(vol.voxel(1, 1, 2), 11.0);
    }
}
