//! Dense row-major tensor over a generic scalar.

use crate::error::{Error, Result};
use crate::num::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::zero(); len],
        }
    }

    pub fn filled(shape: &[usize], value: F) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?} (= {})",
                data.len(),
                shape,
                len
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// The backing buffer itself; used to register parameter tensors with
    /// the optimizer.
    pub fn data_vec_mut(&mut self) -> &mut Vec<F> {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Extents of a rank-3 tensor interpreted as H x W x C.
    pub fn dims3(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected rank-3 tensor");
        (self.shape[0], self.shape[1], self.shape[2])
    }

    /// Extents of a rank-4 tensor.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.shape.len(), 4, "expected rank-4 tensor");
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    #[inline]
    pub fn get3(&self, y: usize, x: usize, c: usize) -> F {
        let (_, w, ch) = self.dims3_unchecked();
        self.data[(y * w + x) * ch + c]
    }

    #[inline]
    pub fn set3(&mut self, y: usize, x: usize, c: usize, v: F) {
        let (_, w, ch) = self.dims3_unchecked();
        self.data[(y * w + x) * ch + c] = v;
    }

    #[inline]
    fn dims3_unchecked(&self) -> (usize, usize, usize) {
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| G::from(v).expect("scalar cast"))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterpret the same buffer under a new shape of equal volume.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_validates_length() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn rank3_indexing_is_row_major_channel_last() {
        let t = Tensor::<f32>::from_vec(&[2, 2, 2], (0..8).map(|v| v as f32).collect()).unwrap();
        assert_eq!(t.get3(0, 0, 0), 0.0);
        assert_eq!(t.get3(0, 0, 1), 1.0);
        assert_eq!(t.get3(0, 1, 0), 2.0);
        assert_eq!(t.get3(1, 1, 1), 7.0);
    }

    #[test]
    fn cast_round_trip() {
        let t = Tensor::<f32>::from_vec(&[3], vec![1.5, -2.25, 0.125]).unwrap();
        let d: Tensor<f64> = t.cast();
        assert_eq!(d.data(), &[1.5, -2.25, 0.125]);
        let back: Tensor<f32> = d.cast();
        assert_eq!(back, t);
    }
}
