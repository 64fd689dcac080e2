//! Floating point abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar usable by the tape, the variational network and the bound.
///
/// Implemented for `f32` and `f64`. The bound identities are only checked to
/// tight tolerances in `f64`; `f32` is supported for fast experimentation.
pub trait Scalar:
    Float
    + FloatConst
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
    /// Lossless-where-possible conversion from a literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("count representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `log(1 + exp(x))` without overflow for large `x`.
    #[inline]
    fn softplus(self) -> Self {
        let zero = Self::zero();
        self.max(zero) + (-self.abs()).exp().ln_1p()
    }

    /// Logistic function, the derivative of [`Scalar::softplus`].
    #[inline]
    fn sigmoid(self) -> Self {
        let one = Self::one();
        if self >= Self::zero() {
            one / (one + (-self).exp())
        } else {
            let e = self.exp();
            e / (one + e)
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_overflow_safe() {
        assert!((0.0f64.softplus() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(1000.0f64.softplus(), 1000.0);
        assert!((-1000.0f64).softplus() >= 0.0);
        assert!(800.0f32.softplus().is_finite());
    }

    #[test]
    fn sigmoid_symmetric() {
        for &x in &[-30.0f64, -2.0, 0.0, 0.5, 40.0] {
            let s = x.sigmoid() + (-x).sigmoid();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }
}
