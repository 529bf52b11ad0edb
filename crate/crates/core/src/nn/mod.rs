//! Minimal reverse-mode building blocks: a named parameter store and
//! layers with explicit forward caches and backward passes.
//!
//! All numeric code is generic over [`Scalar`] so that training runs in
//! `f32` while gradient checks run the identical code path in `f64`.

pub mod gradcheck;
mod layers;
mod optim;
mod store;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use layers::{
    elu, elu_backward, l2_normalize_rows, l2_normalize_rows_backward, rms_normalize, rms_normalize_backward,
    softmax_rows, softmax_rows_backward, Conv2d, ConvCache, ConvSpec, Dense, RMS_EPS,
};
pub use optim::Adam;
pub use store::{ParamId, ParamStore};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal into the working scalar type.
#[inline]
pub fn lit<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("representable literal")
}
