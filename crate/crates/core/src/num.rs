//! Scalar abstraction for the numeric kernels.
//!
//! Training and inference run in `f32`; gradient checking instantiates the
//! same code at `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps};

pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + Sum + Copy + Send + Sync + Debug + Display + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for casting an `f64` constant into the working scalar type.
#[inline]
pub fn fl<F: Scalar>(v: f64) -> F {
    F::from(v).expect("finite f64 constant converts to any Scalar")
}
