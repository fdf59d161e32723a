//! Scalar abstraction used by the math modules.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the library is generic over: `f32` or `f64`.
///
/// `RealField` supplies the transcendental functions and makes the nalgebra
/// decompositions (Cholesky, symmetric eigen) available; the `num_traits`
/// conversions let generic code lift literal constants.
pub trait Scalar: RealField + FromPrimitive + ToPrimitive + Copy {
    /// Lift an `f64` constant into `Self`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("constant not representable in scalar type")
    }

    /// Lossy view of the value as `f64`, for diagnostics.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
