use num_complex::Complex;
use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use crate::error::{KamError, Result};
use crate::scalar::{cis, cone, czero, is_zero, lit, to_f64, Real};

/// Truncated univariate complex power series `c_0 + c_1 z + ... + c_Dz z^Dz`.
///
/// Serialized as a JSON array of `[re, im]` pairs, lowest power first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
#[serde(bound = "F: Real")]
pub struct CoeffSeries<F> {
    coeffs: Vec<Complex<F>>,
}

impl<F: Real> CoeffSeries<F> {
    /// Builds a series from coefficients; an empty vector is read as the zero series of degree 0.
    pub fn from_coeffs(mut coeffs: Vec<Complex<F>>) -> Self {
        if coeffs.is_empty() {
            coeffs.push(czero());
        }
        Self { coeffs }
    }

    pub fn from_real(dz: usize, values: &[F]) -> Self {
        let mut s = Self::zeros(dz);
        for (k, v) in values.iter().enumerate().take(dz + 1) {
            s.coeffs[k] = Complex::new(*v, F::zero());
        }
        s
    }

    pub fn zeros(dz: usize) -> Self {
        Self { coeffs: vec![czero(); dz + 1] }
    }

    pub fn constant(c: Complex<F>, dz: usize) -> Self {
        let mut s = Self::zeros(dz);
        s.coeffs[0] = c;
        s
    }

    pub fn one(dz: usize) -> Self {
        Self::constant(cone(), dz)
    }

    /// The series `z`.
    pub fn z(dz: usize) -> Self {
        Self::monomial(1, cone(), dz)
    }

    pub fn monomial(k: usize, c: Complex<F>, dz: usize) -> Self {
        let mut s = Self::zeros(dz);
        if k <= dz {
            s.coeffs[k] = c;
        }
        s
    }

    pub fn dz(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[Complex<F>] {
        &self.coeffs
    }

    pub fn coeff(&self, k: usize) -> Complex<F> {
        self.coeffs.get(k).copied().unwrap_or_else(czero)
    }

    pub fn set(&mut self, k: usize, c: Complex<F>) {
        if k <= self.dz() {
            self.coeffs[k] = c;
        }
    }

    /// Re-truncates (or zero-pads) to degree `dz`.
    pub fn with_dz(&self, dz: usize) -> Self {
        let mut out = Self::zeros(dz);
        for (k, c) in self.coeffs.iter().enumerate().take(dz + 1) {
            out.coeffs[k] = *c;
        }
        out
    }

    pub fn eval(&self, z: Complex<F>) -> Complex<F> {
        let mut acc = czero();
        for c in self.coeffs.iter().rev() {
            acc = acc * z + *c;
        }
        acc
    }

    pub fn eval_real(&self, x: F) -> Complex<F> {
        self.eval(Complex::new(x, F::zero()))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(is_zero)
    }

    pub fn max_abs(&self) -> F {
        self.coeffs.iter().fold(F::zero(), |m, c| m.max(c.norm()))
    }

    pub fn scale(&self, a: Complex<F>) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| *c * a).collect() }
    }

    pub fn scale_real(&self, a: F) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| *c * a).collect() }
    }

    /// Coefficientwise complex conjugate, i.e. the series `conj(h(conj z))`.
    pub fn conj(&self) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| c.conj()).collect() }
    }

    pub fn derivative(&self) -> Self {
        let dz = self.dz();
        let mut out = Self::zeros(dz);
        for k in 1..=dz {
            out.coeffs[k - 1] = self.coeffs[k] * lit::<F>(k as f64);
        }
        out
    }

    /// `h(s z)`.
    pub fn rescale_argument(&self, s: F) -> Self {
        let mut p = F::one();
        let mut out = self.clone();
        for c in out.coeffs.iter_mut() {
            *c = *c * p;
            p = p * s;
        }
        out
    }

    /// Truncated product; panics on mismatched degrees (see [`CoeffSeries::try_mul`]).
    pub fn mul_trunc(&self, other: &Self) -> Self {
        assert_eq!(self.dz(), other.dz(), "coefficient series degree mismatch");
        let dz = self.dz();
        let mut out = Self::zeros(dz);
        for (i, a) in self.coeffs.iter().enumerate() {
            if is_zero(a) {
                continue;
            }
            for (j, b) in other.coeffs.iter().enumerate().take(dz + 1 - i) {
                out.coeffs[i + j] += *a * *b;
            }
        }
        out
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self> {
        if self.dz() != other.dz() {
            return Err(KamError::DegreeMismatch { left: self.dz(), right: other.dz() });
        }
        Ok(self.mul_trunc(other))
    }

    /// `1/h`; requires a nonzero constant term.
    pub fn recip(&self) -> Result<Self> {
        let c0 = self.coeffs[0];
        if c0.norm() == F::zero() || !c0.norm().is_finite() {
            return Err(KamError::NotInvertible(to_f64(c0.norm())));
        }
        let dz = self.dz();
        let inv0 = cone::<F>() / c0;
        let mut out = Self::zeros(dz);
        out.coeffs[0] = inv0;
        for k in 1..=dz {
            let mut acc: Complex<F> = czero();
            for i in 1..=k {
                acc += self.coeffs[i] * out.coeffs[k - i];
            }
            out.coeffs[k] = -acc * inv0;
        }
        Ok(out)
    }

    /// `self / other` in the truncated ring.
    pub fn div(&self, other: &Self) -> Result<Self> {
        Ok(self.mul_trunc(&other.recip()?))
    }

    /// `e^{a h}`, expanded around the constant term.
    pub fn exp_scaled(&self, a: Complex<F>) -> Result<Self> {
        let c0 = self.coeffs[0] * a;
        if c0.re.abs() >= lit(50.0) || !c0.norm().is_finite() {
            return Err(KamError::ExpOverflow(to_f64(c0.norm())));
        }
        let mut g = self.scale(a);
        g.coeffs[0] = czero();
        // e^{g} with g(0) = 0 by the recursion k e_k = sum_j j g_j e_{k-j}
        let dz = self.dz();
        let mut e = Self::zeros(dz);
        e.coeffs[0] = cone();
        for k in 1..=dz {
            let mut acc = czero();
            for j in 1..=k {
                acc += g.coeffs[j] * lit::<F>(j as f64) * e.coeffs[k - j];
            }
            e.coeffs[k] = acc / lit::<F>(k as f64);
        }
        Ok(e.scale(c0.exp()))
    }

    /// Principal logarithm: `ln h(0) + ln(1 + (h - h(0))/h(0))`.
    pub fn ln(&self) -> Result<Self> {
        let c0 = self.coeffs[0];
        if c0.norm() == F::zero() {
            return Err(KamError::NotInvertible(0.0));
        }
        if c0.re < F::zero() && c0.im.abs() <= c0.norm() * lit(1e-8) {
            return Err(KamError::BranchCut(format!(
                "constant term {:e}{:+e}i lies on the negative real axis",
                c0.re, c0.im
            )));
        }
        let dz = self.dz();
        let w = self.scale(cone::<F>() / c0);
        // (ln w)' = w'/w with w(0) = 1
        let dw = w.derivative();
        let q = dw.mul_trunc(&w.recip()?);
        let mut out = Self::zeros(dz);
        out.coeffs[0] = c0.ln();
        for k in 1..=dz {
            out.coeffs[k] = q.coeffs[k - 1] / lit::<F>(k as f64);
        }
        Ok(out)
    }

    /// `h^t` on the principal branch.
    pub fn powf(&self, t: F) -> Result<Self> {
        self.ln()?.exp_scaled(Complex::new(t, F::zero()))
    }

    /// `e^{i k h}` for real `k`.
    pub fn cis_series(&self, k: F) -> Result<Self> {
        self.exp_scaled(Complex::new(F::zero(), k))
    }

    /// Largest imaginary part among the coefficients.
    pub fn max_imag(&self) -> F {
        self.coeffs.iter().fold(F::zero(), |m, c| m.max(c.im.abs()))
    }

    pub fn is_real(&self, tol: F) -> bool {
        self.max_imag() <= tol
    }

    /// Asserts realness within `tol` (scaled by the series magnitude) and zeroes imaginary parts.
    pub fn project_real(&self, tol: F, what: &str) -> Result<Self> {
        let imag = self.max_imag();
        let limit = tol * F::one().max(self.max_abs());
        if imag > limit || imag.is_nan() {
            return Err(KamError::NotReal { what: what.to_string(), imag: to_f64(imag), tol: to_f64(limit) });
        }
        Ok(Self { coeffs: self.coeffs.iter().map(|c| Complex::new(c.re, F::zero())).collect() })
    }

    /// `|h|_{ω,β}`: maximum of `|h|` over `samples` equispaced points of `|z - ω| = β`.
    pub fn sup_on_circle(&self, omega: F, beta: F, samples: usize) -> F {
        let center = Complex::new(omega, F::zero());
        if beta == F::zero() {
            return self.eval(center).norm();
        }
        let n = samples.max(1);
        let step = F::TAU() / lit::<F>(n as f64);
        (0..n).fold(F::zero(), |m, k| {
            let z = center + cis(step * lit::<F>(k as f64)) * beta;
            m.max(self.eval(z).norm())
        })
    }

    /// Real part of `h(x)` for real `x`; meaningful for real-flagged series.
    pub fn eval_re(&self, x: F) -> F {
        self.eval_real(x).re
    }
}

macro_rules! coeff_binop {
    ($tr:ident, $f:ident, $op:tt) => {
        impl<'a, F: Real> $tr<&'a CoeffSeries<F>> for &'a CoeffSeries<F> {
            type Output = CoeffSeries<F>;
            fn $f(self, rhs: &'a CoeffSeries<F>) -> CoeffSeries<F> {
                assert_eq!(self.dz(), rhs.dz(), "coefficient series degree mismatch");
                CoeffSeries {
                    coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| *a $op *b).collect(),
                }
            }
        }
        impl<F: Real> $tr for CoeffSeries<F> {
            type Output = CoeffSeries<F>;
            fn $f(self, rhs: CoeffSeries<F>) -> CoeffSeries<F> {
                (&self).$f(&rhs)
            }
        }
    };
}
coeff_binop!(Add, add, +);
coeff_binop!(Sub, sub, -);

impl<'a, F: Real> Mul<&'a CoeffSeries<F>> for &'a CoeffSeries<F> {
    type Output = CoeffSeries<F>;
    fn mul(self, rhs: &'a CoeffSeries<F>) -> CoeffSeries<F> {
        self.mul_trunc(rhs)
    }
}

impl<F: Real> Mul for CoeffSeries<F> {
    type Output = CoeffSeries<F>;
    fn mul(self, rhs: CoeffSeries<F>) -> CoeffSeries<F> {
        self.mul_trunc(&rhs)
    }
}

impl<F: Real> Neg for CoeffSeries<F> {
    type Output = CoeffSeries<F>;
    fn neg(self) -> CoeffSeries<F> {
        CoeffSeries { coeffs: self.coeffs.into_iter().map(|c| -c).collect() }
    }
}

impl<F: Real> Neg for &CoeffSeries<F> {
    type Output = CoeffSeries<F>;
    fn neg(self) -> CoeffSeries<F> {
        -(self.clone())
    }
}

impl<F: Real> AddAssign<&CoeffSeries<F>> for CoeffSeries<F> {
    fn add_assign(&mut self, rhs: &CoeffSeries<F>) {
        assert_eq!(self.dz(), rhs.dz(), "coefficient series degree mismatch");
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a += *b;
        }
    }
}

impl<F: Real> SubAssign<&CoeffSeries<F>> for CoeffSeries<F> {
    fn sub_assign(&mut self, rhs: &CoeffSeries<F>) {
        assert_eq!(self.dz(), rhs.dz(), "coefficient series degree mismatch");
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a -= *b;
        }
    }
}
