//! Hand-written forward and backward passes for the handful of layers the decoder needs.
//!
//! Feature maps are `(C, D, H, W)` arrays in standard layout. Everything is generic
//! over [`Scalar`] so the same code trains in `f32` and is audited in `f64`.

mod conv;
mod norm;
mod ops;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

pub use conv::Conv3d;
pub use norm::{InstanceNorm, NormCache};
pub use ops::{leaky_relu, leaky_relu_backward, softmax_channels, upsample_inplane2, upsample_inplane2_backward, LEAKY_SLOPE};

pub trait Scalar:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn lit<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("representable constant")
}
