//! Scalar abstraction shared by the metric and statistics code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used for attribution values, IoU scores and test statistics.
///
/// Implemented for `f32` and `f64`. Pixel counts never pass through this
/// type; they stay in `u64` until the final ratio.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used for constants and distribution lookups.
    #[inline]
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// Exact ratio of two counts, computed with a single division.
    #[inline]
    fn ratio(numerator: u64, denominator: u64) -> Self {
        Self::from_u64(numerator).expect("count fits") / Self::from_u64(denominator).expect("count fits")
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
}
