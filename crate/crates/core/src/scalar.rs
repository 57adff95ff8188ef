//! Floating-point scalar abstraction shared by every tensor, network and map.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of a [`Tensor`](crate::tensor::Tensor).
///
/// Implemented for `f32` (the working precision of trained networks and
/// model files) and `f64` (used for high-precision reference evaluation).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; values outside the range saturate to infinity.
    fn of(x: f64) -> Self {
        Self::from_f64(x).unwrap_or_else(Self::nan)
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Conversion between scalar types.
    fn cast<U: Scalar>(self) -> U {
        U::of(self.as_f64())
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
