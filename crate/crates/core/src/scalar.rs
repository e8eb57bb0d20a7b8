//! Floating-point abstraction shared by the scoring modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Num, ToPrimitive, Zero};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real number type the scoring formulas are written against.
///
/// Implemented for `f32` and `f64`. The pipeline itself runs on `f64`; the
/// `f32` instantiation exists for memory-constrained batch scoring.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 literal representable in scalar type")
    }

    fn from_hops(hops: usize) -> Self {
        Self::from_usize(hops).expect("hop count representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    /// True when `self` lies in the closed unit interval.
    fn in_unit_interval(self) -> bool {
        self >= Self::zero() && self <= Self::one()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Field arithmetic for entity weights. Besides the float types this covers
/// exact rationals, so weight normalization can be checked without rounding.
pub trait Weight: Num + Clone + PartialOrd + Debug + Display {
    /// Finite and nonnegative.
    fn is_admissible(&self) -> bool;
}

impl Weight for f32 {
    fn is_admissible(&self) -> bool {
        self.is_finite() && *self >= 0.0
    }
}

impl Weight for f64 {
    fn is_admissible(&self) -> bool {
        self.is_finite() && *self >= 0.0
    }
}

impl<T> Weight for Ratio<T>
where
    T: num_integer::Integer + Clone + Display + Debug,
{
    fn is_admissible(&self) -> bool {
        *self >= Self::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_interval() {
        assert!(0.0f64.in_unit_interval());
        assert!(1.0f32.in_unit_interval());
        assert!(!f64::NAN.in_unit_interval());
        assert!(!(-1e-12f64).in_unit_interval());
    }

    #[test]
    fn literal_roundtrip() {
        assert_eq!(f32::lit(0.5), 0.5f32);
        assert_eq!(f64::from_hops(3), 3.0);
    }
}
