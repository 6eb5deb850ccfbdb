//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the models and analyses are generic over.
///
/// Implemented for `f32` (training, recording) and `f64` (gradient checks,
/// geometry oracles).
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; panics only on non-representable input,
    /// which cannot happen for `f32`/`f64`.
    #[inline]
    fn from_f64c(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn to_f64c(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("scalar converts to f64")
    }

    #[inline]
    fn from_usize_c(v: usize) -> Self {
        Self::from_f64c(v as f64)
    }

    /// Logistic sigmoid, written to stay finite for large |x|.
    #[inline]
    fn sigmoid(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_symmetric_and_finite() {
        for &x in &[-800.0f64, -3.0, 0.0, 2.5, 800.0] {
            let s = x.sigmoid();
            assert!(s.is_finite());
            assert!((s + (-x).sigmoid() - 1.0).abs() < 1e-12);
        }
        assert_eq!(0.0f32.sigmoid(), 0.5);
    }
}
