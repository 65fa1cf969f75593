//! Scalar abstraction shared by every numerical module.

use std::fmt;

use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Real scalar type the models are generic over (`f32` or `f64`).
///
/// Random variates are always drawn in `f64` and converted, so a given seed
/// yields the same stream of decisions whatever the working precision.
pub trait Real:
    RealField + Copy + ToPrimitive + Default + fmt::Display + fmt::Debug + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: RealField
        + Copy
        + ToPrimitive
        + Default
        + fmt::Display
        + fmt::Debug
        + Send
        + Sync
        + 'static
{
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    ToPrimitive::to_f64(&x).unwrap_or(f64::NAN)
}

#[inline]
pub fn infinity<T: Real>() -> T {
    lit(f64::INFINITY)
}

#[inline]
pub fn is_finite<T: Real>(x: T) -> bool {
    to_f64(x).is_finite()
}
