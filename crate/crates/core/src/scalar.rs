//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type for arrays, layers and solvers.
///
/// Implemented for `f32` and `f64`. Experiments and the CLI run in `f64`;
/// the `f32` instantiation exists for lighter inference workloads.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Tag written into serialized models.
    const NAME: &'static str;

    /// Lossless widening to `f64`.
    fn to_f64_exact(self) -> f64;

    /// Conversion from `f64`; rounds for narrower types.
    fn from_f64_lossy(v: f64) -> Self;

    fn lit(v: f64) -> Self {
        Self::from_f64_lossy(v)
    }

    fn of_usize(v: usize) -> Self {
        Self::from_f64_lossy(v as f64)
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn to_f64_exact(self) -> f64 {
        self
    }

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn to_f64_exact(self) -> f64 {
        self as f64
    }

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}
