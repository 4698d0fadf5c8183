//! Floating-point scalar abstraction used by the feature and model code.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};

/// Real scalar type the feature vectors and the classifier are generic over.
///
/// Implemented for `f32` and `f64`. Exact quantities (path frequency ratios,
/// semantic density, recall) are kept as [`crate::Rational`] and only
/// converted into a `Scalar` when a feature vector is assembled.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    fn from_f64_lossy(value: f64) -> Self {
        Self::from_f64(value).unwrap_or_else(Self::nan)
    }

    fn from_usize_lossy(value: usize) -> Self {
        Self::from_usize(value).unwrap_or_else(Self::infinity)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Logistic sigmoid, evaluated without overflow for large `|z|`.
    fn sigmoid(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }

    /// `ln(1 + exp(z))` without overflow.
    fn softplus(self) -> Self {
        if self > Self::zero() {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an exact ratio into a scalar.
pub fn ratio_to_scalar<T: Scalar>(r: &crate::Rational) -> T {
    T::from_u64(*r.numer()).unwrap_or_else(T::nan) / T::from_u64(*r.denom()).unwrap_or_else(T::nan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(0.0f64.sigmoid(), 0.5);
        assert_eq!(1000.0f64.sigmoid(), 1.0);
        assert_eq!((-1000.0f64).sigmoid(), 0.0);
        assert!((-1000.0f32).sigmoid().is_finite());
        assert!((800.0f64).softplus().is_finite());
        assert!(((-800.0f64).softplus()) >= 0.0);
    }

    #[test]
    fn softplus_matches_direct_formula() {
        for z in [-5.0f64, -0.3, 0.0, 0.7, 4.0] {
            let direct = (1.0 + z.exp()).ln();
            assert!((z.softplus() - direct).abs() < 1e-12);
        }
    }
}
