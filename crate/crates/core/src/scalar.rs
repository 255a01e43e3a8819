//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar the simplex, scoring and model code is generic over.
///
/// Implemented for `f32` and `f64`. Tolerances are expressed relative to the
/// type's machine epsilon so the same code works at both precisions.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Tolerance on `|sum - 1|` accepted when validating a probability vector.
    fn simplex_tolerance() -> Self {
        Self::lit(1e-9).max(Self::epsilon() * Self::lit(64.0))
    }

    /// Tolerance on the simplex-sum constraint inside the entmax threshold search.
    fn entmax_tolerance() -> Self {
        Self::lit(1e-10).max(Self::epsilon() * Self::lit(16.0))
    }

    /// Lower clamp applied to probabilities before taking logs on the training path.
    fn prob_floor() -> Self {
        Self::lit(1e-12).max(Self::min_positive_value())
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `w * s` with the convention `0 * (-inf) = 0`.
#[inline]
pub(crate) fn weighted<T: Scalar>(w: T, s: T) -> T {
    if w == T::zero() {
        T::zero()
    } else {
        w * s
    }
}
