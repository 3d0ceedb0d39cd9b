//! Lesion-patch classification toolkit: a small convolutional network
//! trained end to end, a weighted kernel extreme learning machine over its
//! intermediate features, class activation maps, and an imbalance-aware
//! evaluation harness, plus the data plumbing to feed them.
//!
//! The numeric core is generic over the scalar type ([`num::Scalar`], i.e.
//! `f32` or `f64`); training runs at `f32`, gradient checking at `f64`.

pub mod error;
pub mod num;
pub mod rng;
pub mod tensor;

pub mod ops;

pub mod data;
pub mod model;

pub mod welm;

pub mod cam;
pub mod ppm;

pub mod metrics;
pub mod report;
pub mod sweep;
pub mod tsne;
pub mod viz;

pub mod synth;

pub use error::{Error, Result};
pub use rng::Pcg32;
pub use tensor::Tensor;

/// Working precision for training and inference.
pub type Real = f32;
pub type Tensor32 = Tensor<f32>;
/// Double precision, used by gradient checking and the kernel solver.
pub type Tensor64 = Tensor<f64>;
