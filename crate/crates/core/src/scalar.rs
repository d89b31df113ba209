//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All math is written against [`Scalar`], implemented for `f32` and `f64`.
//! Verification code (the Monte Carlo oracles in [`crate::sim`]) is pinned to
//! `f64`; the optimizers, schedules, metrics and toy models accept either.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

/// Floating point type usable throughout the crate.
pub trait Scalar:
    'static
    + Float
    + FloatConst
    + serde::Serialize
    + serde::de::DeserializeOwned
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
{
    /// Converts an `f64` literal or hyperparameter into this type.
    #[inline]
    fn lit(x: f64) -> Self {
        // f32/f64 conversions from f64 never fail (they round or saturate).
        Self::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count is representable")
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_conversion() {
        assert_eq!(f64::lit(0.25), 0.25);
        assert_eq!(f32::lit(0.25), 0.25f32);
        assert_eq!(f32::from_count(7), 7.0);
        assert_eq!(0.5f32.to_f64_lossless(), 0.5);
    }
}
