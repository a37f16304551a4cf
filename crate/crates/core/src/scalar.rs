//! Scalar abstraction so the numeric pipeline runs at f32 or f64.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point scalar used throughout the pipeline.
///
/// Everything numeric is generic over this trait; concrete aliases at the
/// crate root pick f32 or f64. Gradient checks want f64, while checkpoint
/// files are f32 on disk, so both impls see real use.
pub trait Real:
    num_traits::Float
    + num_traits::NumCast
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum<Self>
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Shorthand for lifting an f64 literal into the working scalar type.
#[inline(always)]
pub fn real<T: Real>(v: f64) -> T {
    T::from_f64(v)
}
