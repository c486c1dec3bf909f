//! Scalar abstraction: the numeric core is generic over the floating-point
//! type (f32 or f64) through a single trait alias.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use std::iter::Sum;

/// Floating-point scalar used throughout the library.
///
/// Blanket-implemented for every type with the required bounds; in practice
/// `f64` (the default) and `f32`. Tolerance defaults in [`crate::sdp`] and
/// the oracle assume f64 precision; f32 callers should pass looser settings.
pub trait Scalar:
    RealField + FromPrimitive + ToPrimitive + Copy + Sum + Send + Sync + 'static
{
    /// Convert from an `f64` literal (defaults, config values).
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 not representable in scalar type")
    }

    /// Convert to `f64` for reporting and serialization.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl<T> Scalar for T where
    T: RealField + FromPrimitive + ToPrimitive + Copy + Sum + Send + Sync + 'static
{
}
