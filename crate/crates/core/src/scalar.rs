//! Floating-point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Real scalar used for embeddings and gradients: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Clamp applied to the argument of `atanh` (`x <= 1 - eps`).
    fn atanh_eps() -> Self;

    /// Lossless-enough conversion of a literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {
    #[inline]
    fn atanh_eps() -> Self {
        4.0 * f32::EPSILON
    }
}

impl Scalar for f64 {
    #[inline]
    fn atanh_eps() -> Self {
        1e-15
    }
}

/// Margin kept between projected points and the ball boundary.
pub const BALL_EPS: f64 = 1e-5;

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub(crate) fn norm_sq<T: Scalar>(a: &[T]) -> T {
    dot(a, a)
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
