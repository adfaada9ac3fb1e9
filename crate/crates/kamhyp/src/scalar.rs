//! Scalar abstraction shared by the series and involution layers.

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display, LowerExp};

/// Real floating point scalar: f32 or f64.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
    + serde::Serialize
    + serde::de::DeserializeOwned
{
}
impl Real for f32 {}
impl Real for f64 {}

/// Converts an f64 literal into the working scalar.
#[inline]
pub fn lit<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("literal representable in scalar type")
}

#[inline]
pub fn cplx<F: Real>(re: F, im: F) -> Complex<F> {
    Complex::new(re, im)
}

#[inline]
pub fn czero<F: Real>() -> Complex<F> {
    Complex::new(F::zero(), F::zero())
}

#[inline]
pub fn cone<F: Real>() -> Complex<F> {
    Complex::new(F::one(), F::zero())
}

/// e^{iθ}
#[inline]
pub fn cis<F: Real>(theta: F) -> Complex<F> {
    Complex::new(theta.cos(), theta.sin())
}

#[inline]
pub fn is_zero<F: Real>(c: &Complex<F>) -> bool {
    c.re == F::zero() && c.im == F::zero()
}

#[inline]
pub fn to_f64<F: Real>(x: F) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
