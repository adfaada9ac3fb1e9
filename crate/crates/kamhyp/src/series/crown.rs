use num_complex::Complex;
use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use super::coeff::CoeffSeries;
use crate::error::{KamError, Result};
use crate::scalar::{cone, czero, is_zero, to_f64, Real};

#[inline]
fn offset(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Position of `ξ^m η^n` in graded-lexicographic storage: total degree first,
/// then decreasing power of ξ.
#[inline]
pub fn graded_index(m: usize, n: usize) -> usize {
    offset(m + n) + n
}

/// Number of monomials of total degree at most `d`.
#[inline]
pub fn graded_len(d: usize) -> usize {
    offset(d + 1)
}

/// Truncated bivariate series `Σ a_{m,n} ξ^m η^n`, `m + n ≤ D`.
///
/// `tail` accumulates the 1-norm of coefficients dropped by truncating
/// products; it is reported, not propagated rigorously.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct CrownSeries<F> {
    degree: usize,
    coeffs: Vec<Complex<F>>,
    #[serde(default)]
    tail: F,
}

/// One entry `f_{l,j}` of the crown decomposition; `l·j = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrownEntry<F> {
    pub l: usize,
    pub j: usize,
    pub series: CoeffSeries<F>,
}

impl<F: Real> CrownSeries<F> {
    pub fn zeros(degree: usize) -> Self {
        Self { degree, coeffs: vec![czero(); graded_len(degree)], tail: F::zero() }
    }

    pub fn from_coeffs(degree: usize, coeffs: Vec<Complex<F>>) -> Result<Self> {
        if coeffs.len() != graded_len(degree) {
            return Err(KamError::DegreeMismatch { left: graded_len(degree), right: coeffs.len() });
        }
        Ok(Self { degree, coeffs, tail: F::zero() })
    }

    pub fn from_fn(degree: usize, mut f: impl FnMut(usize, usize) -> Complex<F>) -> Self {
        let mut s = Self::zeros(degree);
        for d in 0..=degree {
            for n in 0..=d {
                s.coeffs[offset(d) + n] = f(d - n, n);
            }
        }
        s
    }

    pub fn constant(c: Complex<F>, degree: usize) -> Self {
        let mut s = Self::zeros(degree);
        s.coeffs[0] = c;
        s
    }

    pub fn one(degree: usize) -> Self {
        Self::constant(cone(), degree)
    }

    pub fn monomial(m: usize, n: usize, c: Complex<F>, degree: usize) -> Self {
        let mut s = Self::zeros(degree);
        s.set(m, n, c);
        s
    }

    pub fn xi(degree: usize) -> Self {
        Self::monomial(1, 0, cone(), degree)
    }

    pub fn eta(degree: usize) -> Self {
        Self::monomial(0, 1, cone(), degree)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[Complex<F>] {
        &self.coeffs
    }

    pub fn tail(&self) -> F {
        self.tail
    }

    pub fn with_tail(mut self, tail: F) -> Self {
        self.tail = tail;
        self
    }

    pub fn get(&self, m: usize, n: usize) -> Complex<F> {
        if m + n > self.degree {
            czero()
        } else {
            self.coeffs[graded_index(m, n)]
        }
    }

    /// Sets `a_{m,n}`; indices beyond the truncation degree are ignored.
    pub fn set(&mut self, m: usize, n: usize, c: Complex<F>) {
        if m + n <= self.degree {
            self.coeffs[graded_index(m, n)] = c;
        }
    }

    pub fn add_to(&mut self, m: usize, n: usize, c: Complex<F>) {
        if m + n <= self.degree {
            self.coeffs[graded_index(m, n)] += c;
        }
    }

    /// Iterates `(m, n, a_{m,n})` in storage order.
    pub fn terms(&self) -> impl Iterator<Item = (usize, usize, Complex<F>)> + '_ {
        (0..=self.degree).flat_map(move |d| (0..=d).map(move |n| (d - n, n, self.coeffs[offset(d) + n])))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(is_zero)
    }

    pub fn max_abs(&self) -> F {
        self.coeffs.iter().fold(F::zero(), |m, c| m.max(c.norm()))
    }

    pub fn norm1(&self) -> F {
        self.coeffs.iter().fold(F::zero(), |m, c| m + c.norm())
    }

    /// Majorant norm `Σ |a_{m,n}| r^{m+n}`.
    pub fn majorant_norm(&self, r: F) -> F {
        let mut total = F::zero();
        let mut rp = F::one();
        for d in 0..=self.degree {
            let block: F = self.coeffs[offset(d)..offset(d + 1)].iter().fold(F::zero(), |s, c| s + c.norm());
            total += block * rp;
            rp = rp * r;
        }
        total
    }

    /// Lowest total degree carrying a nonzero coefficient.
    pub fn order(&self) -> Option<usize> {
        (0..=self.degree).find(|&d| self.coeffs[offset(d)..offset(d + 1)].iter().any(|c| !is_zero(c)))
    }

    /// Lowest total degree carrying a coefficient above `tol`.
    pub fn order_above(&self, tol: F) -> Option<usize> {
        (0..=self.degree).find(|&d| self.coeffs[offset(d)..offset(d + 1)].iter().any(|c| c.norm() > tol))
    }

    /// Homogeneous part of total degree `d`.
    pub fn homogeneous(&self, d: usize) -> Self {
        let mut out = Self::zeros(self.degree);
        if d <= self.degree {
            out.coeffs[offset(d)..offset(d + 1)].copy_from_slice(&self.coeffs[offset(d)..offset(d + 1)]);
        }
        out
    }

    /// Zeroes every coefficient of total degree outside `lo..=hi`.
    pub fn degree_band(&self, lo: usize, hi: usize) -> Self {
        let mut out = self.clone();
        for d in 0..=self.degree {
            if d < lo || d > hi {
                out.coeffs[offset(d)..offset(d + 1)].iter_mut().for_each(|c| *c = czero());
            }
        }
        out
    }

    /// Re-truncates (or zero-pads) to degree `degree`.
    pub fn with_degree(&self, degree: usize) -> Self {
        let mut out = Self::zeros(degree);
        let d = degree.min(self.degree);
        out.coeffs[..graded_len(d)].copy_from_slice(&self.coeffs[..graded_len(d)]);
        out.tail = self.tail;
        out
    }

    pub fn scale(&self, a: Complex<F>) -> Self {
        Self {
            degree: self.degree,
            coeffs: self.coeffs.iter().map(|c| *c * a).collect(),
            tail: self.tail * a.norm(),
        }
    }

    pub fn scale_real(&self, a: F) -> Self {
        self.scale(Complex::new(a, F::zero()))
    }

    /// Coefficientwise conjugate `f̄`.
    pub fn conjugate(&self) -> Self {
        Self { degree: self.degree, coeffs: self.coeffs.iter().map(|c| c.conj()).collect(), tail: self.tail }
    }

    /// `f(η, ξ)`.
    pub fn swap_vars(&self) -> Self {
        Self::from_fn(self.degree, |m, n| self.get(n, m))
    }

    pub fn eval(&self, xi: Complex<F>, eta: Complex<F>) -> Complex<F> {
        // Horner in η inside Horner in ξ
        let mut acc = czero();
        for m in (0..=self.degree).rev() {
            let mut inner = czero();
            for n in (0..=(self.degree - m)).rev() {
                inner = inner * eta + self.coeffs[graded_index(m, n)];
            }
            acc = acc * xi + inner;
        }
        acc
    }

    /// `ξ f`.
    pub fn mul_xi(&self) -> Self {
        let mut out = Self::zeros(self.degree);
        for (m, n, c) in self.terms() {
            out.set(m + 1, n, c);
        }
        out.tail = self.tail;
        out
    }

    /// `η f`.
    pub fn mul_eta(&self) -> Self {
        let mut out = Self::zeros(self.degree);
        for (m, n, c) in self.terms() {
            out.set(m, n + 1, c);
        }
        out.tail = self.tail;
        out
    }

    /// The series `h(ξη)`.
    pub fn lift(h: &CoeffSeries<F>, degree: usize) -> Self {
        let mut out = Self::zeros(degree);
        for k in 0..=(degree / 2).min(h.dz()) {
            out.set(k, k, h.coeff(k));
        }
        out
    }

    /// `h(ξη)·f`.
    pub fn mul_lifted(&self, h: &CoeffSeries<F>) -> Self {
        let mut out = Self::zeros(self.degree);
        for (m, n, c) in self.terms() {
            if is_zero(&c) {
                continue;
            }
            for k in 0..=h.dz() {
                if m + n + 2 * k > self.degree {
                    break;
                }
                out.add_to(m + k, n + k, c * h.coeff(k));
            }
        }
        out.tail = self.tail * h.coeffs().iter().fold(F::zero(), |s, c| s + c.norm());
        out
    }

    /// Truncated product; panics on mismatched degrees (see [`multiply`]).
    pub fn mul_trunc(&self, other: &Self) -> Self {
        assert_eq!(self.degree, other.degree, "crown series degree mismatch");
        let d = self.degree;
        let mut out = Self::zeros(d);
        let a = &self.coeffs;
        let b = &other.coeffs;
        for d1 in 0..=d {
            let o1 = offset(d1);
            for n1 in 0..=d1 {
                let x = a[o1 + n1];
                if is_zero(&x) {
                    continue;
                }
                for d2 in 0..=(d - d1) {
                    let o2 = offset(d2);
                    let o3 = offset(d1 + d2) + n1;
                    let src = &b[o2..o2 + d2 + 1];
                    let dst = &mut out.coeffs[o3..o3 + d2 + 1];
                    for (o, y) in dst.iter_mut().zip(src) {
                        *o += x * *y;
                    }
                }
            }
        }
        out.tail = self.product_tail(other);
        out
    }

    fn block_norms(&self) -> Vec<F> {
        (0..=self.degree)
            .map(|d| self.coeffs[offset(d)..offset(d + 1)].iter().fold(F::zero(), |s, c| s + c.norm()))
            .collect()
    }

    fn product_tail(&self, other: &Self) -> F {
        let na = self.block_norms();
        let nb = other.block_norms();
        let d = self.degree;
        let mut dropped = F::zero();
        for (d1, x) in na.iter().enumerate() {
            if *x == F::zero() {
                continue;
            }
            for (d2, y) in nb.iter().enumerate() {
                if d1 + d2 > d {
                    dropped += *x * *y;
                }
            }
        }
        let sa: F = na.iter().fold(F::zero(), |s, v| s + *v);
        let sb: F = nb.iter().fold(F::zero(), |s, v| s + *v);
        dropped + self.tail * sb + other.tail * sa + self.tail * other.tail
    }

    /// Crown coefficient `f_{l,j}(z) = Σ_k a_{k+l,k+j} z^k` (`l·j = 0`), padded to degree `D/2`.
    pub fn crown_coeff(&self, l: usize, j: usize) -> CoeffSeries<F> {
        debug_assert!(l == 0 || j == 0);
        let dz = self.degree / 2;
        let mut out = CoeffSeries::zeros(dz);
        let mut k = 0;
        while 2 * k + l + j <= self.degree {
            out.set(k, self.get(k + l, k + j));
            k += 1;
        }
        out
    }

    /// Adds `h(ξη) ξ^l η^j` (terms beyond the truncation degree are dropped).
    pub fn add_crown_term(&mut self, l: usize, j: usize, h: &CoeffSeries<F>) {
        for k in 0..=h.dz() {
            if 2 * k + l + j > self.degree {
                break;
            }
            self.add_to(k + l, k + j, h.coeff(k));
        }
    }

    /// Crown decomposition, ordered `(0,0), (1,0), (0,1), (2,0), (0,2), …`.
    pub fn crown_decompose(&self) -> Vec<CrownEntry<F>> {
        let mut out = vec![CrownEntry { l: 0, j: 0, series: self.crown_coeff(0, 0) }];
        for t in 1..=self.degree {
            out.push(CrownEntry { l: t, j: 0, series: self.crown_coeff(t, 0) });
            out.push(CrownEntry { l: 0, j: t, series: self.crown_coeff(0, t) });
        }
        out
    }

    /// Reassembles `Σ f_{l,j}(ξη) ξ^l η^j`.
    pub fn from_crown(entries: &[CrownEntry<F>], degree: usize) -> Self {
        let mut out = Self::zeros(degree);
        for e in entries {
            out.add_crown_term(e.l, e.j, &e.series);
        }
        out
    }

    /// Keeps only crown indices with `l, j ≤ k`, i.e. monomials with `|m − n| ≤ k`.
    pub fn crown_band(&self, k: usize) -> Self {
        Self::from_fn(self.degree, |m, n| if m.abs_diff(n) <= k { self.get(m, n) } else { czero() })
    }

    pub fn max_imag(&self) -> F {
        self.coeffs.iter().fold(F::zero(), |m, c| m.max(c.im.abs()))
    }

    /// Asserts real coefficients within `tol` (relative to the magnitude) and zeroes imaginary parts.
    pub fn project_real(&self, tol: F, what: &str) -> Result<Self> {
        let imag = self.max_imag();
        let limit = tol * F::one().max(self.max_abs());
        if imag > limit || imag.is_nan() {
            return Err(KamError::NotReal { what: what.to_string(), imag: to_f64(imag), tol: to_f64(limit) });
        }
        Ok(Self {
            degree: self.degree,
            coeffs: self.coeffs.iter().map(|c| Complex::new(c.re, F::zero())).collect(),
            tail: self.tail,
        })
    }
}

/// Checked truncated product.
pub fn multiply<F: Real>(f: &CrownSeries<F>, g: &CrownSeries<F>) -> Result<CrownSeries<F>> {
    if f.degree() != g.degree() {
        return Err(KamError::DegreeMismatch { left: f.degree(), right: g.degree() });
    }
    Ok(f.mul_trunc(g))
}

/// Product computed crown-coefficientwise:
/// `(fg)_{0,0} = f_{0,0}g_{0,0} + z Σ_{k≥1} (f_{k,0}g_{0,k} + f_{0,k}g_{k,0})` and
/// `(fg)_{l,0} = Σ_{k=0}^{l} f_{l−k,0}g_{k,0} + Σ_{k≥1} z^k (f_{l+k,0}g_{0,k} + f_{0,k}g_{l+k,0})`,
/// with the mirrored formula for `(fg)_{0,j}`.
pub fn crown_product<F: Real>(f: &CrownSeries<F>, g: &CrownSeries<F>) -> Result<CrownSeries<F>> {
    if f.degree() != g.degree() {
        return Err(KamError::DegreeMismatch { left: f.degree(), right: g.degree() });
    }
    let d = f.degree();
    let dz = d / 2;
    let fc = |l: usize, j: usize| if l + j <= d { f.crown_coeff(l, j) } else { CoeffSeries::zeros(dz) };
    let gc = |l: usize, j: usize| if l + j <= d { g.crown_coeff(l, j) } else { CoeffSeries::zeros(dz) };
    let fx: Vec<_> = (0..=d).map(|l| fc(l, 0)).collect();
    let fy: Vec<_> = (0..=d).map(|j| fc(0, j)).collect();
    let gx: Vec<_> = (0..=d).map(|l| gc(l, 0)).collect();
    let gy: Vec<_> = (0..=d).map(|j| gc(0, j)).collect();
    let zpow = |k: usize| CoeffSeries::monomial(k, cone(), dz);
    let mut entries = Vec::with_capacity(2 * d + 1);
    for t in 0..=d {
        // (fg)_{t,0}
        let mut ht = CoeffSeries::zeros(dz);
        for k in 0..=t {
            ht += &fx[t - k].mul_trunc(&gx[k]);
        }
        for k in 1..=d {
            if t + k > d {
                break;
            }
            let cross = &fx[t + k].mul_trunc(&gy[k]) + &fy[k].mul_trunc(&gx[t + k]);
            ht += &cross.mul_trunc(&zpow(k));
        }
        entries.push(CrownEntry { l: t, j: 0, series: ht });
        if t == 0 {
            continue;
        }
        let mut hs = CoeffSeries::zeros(dz);
        for k in 0..=t {
            hs += &fy[t - k].mul_trunc(&gy[k]);
        }
        for k in 1..=d {
            if t + k > d {
                break;
            }
            let cross = &fy[t + k].mul_trunc(&gx[k]) + &fx[k].mul_trunc(&gy[t + k]);
            hs += &cross.mul_trunc(&zpow(k));
        }
        entries.push(CrownEntry { l: 0, j: t, series: hs });
    }
    Ok(CrownSeries::from_crown(&entries, d))
}

macro_rules! crown_binop {
    ($tr:ident, $f:ident, $op:tt) => {
        impl<'a, F: Real> $tr<&'a CrownSeries<F>> for &'a CrownSeries<F> {
            type Output = CrownSeries<F>;
            fn $f(self, rhs: &'a CrownSeries<F>) -> CrownSeries<F> {
                assert_eq!(self.degree, rhs.degree, "crown series degree mismatch");
                CrownSeries {
                    degree: self.degree,
                    coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| *a $op *b).collect(),
                    tail: self.tail + rhs.tail,
                }
            }
        }
        impl<F: Real> $tr for CrownSeries<F> {
            type Output = CrownSeries<F>;
            fn $f(self, rhs: CrownSeries<F>) -> CrownSeries<F> {
                (&self).$f(&rhs)
            }
        }
    };
}
crown_binop!(Add, add, +);
crown_binop!(Sub, sub, -);

impl<'a, F: Real> Mul<&'a CrownSeries<F>> for &'a CrownSeries<F> {
    type Output = CrownSeries<F>;
    fn mul(self, rhs: &'a CrownSeries<F>) -> CrownSeries<F> {
        self.mul_trunc(rhs)
    }
}

impl<F: Real> Mul for CrownSeries<F> {
    type Output = CrownSeries<F>;
    fn mul(self, rhs: CrownSeries<F>) -> CrownSeries<F> {
        self.mul_trunc(&rhs)
    }
}

impl<F: Real> Neg for CrownSeries<F> {
    type Output = CrownSeries<F>;
    fn neg(mut self) -> CrownSeries<F> {
        self.coeffs.iter_mut().for_each(|c| *c = -*c);
        self
    }
}

impl<F: Real> Neg for &CrownSeries<F> {
    type Output = CrownSeries<F>;
    fn neg(self) -> CrownSeries<F> {
        -(self.clone())
    }
}

impl<F: Real> AddAssign<&CrownSeries<F>> for CrownSeries<F> {
    fn add_assign(&mut self, rhs: &CrownSeries<F>) {
        assert_eq!(self.degree, rhs.degree, "crown series degree mismatch");
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a += *b;
        }
        self.tail += rhs.tail;
    }
}

impl<F: Real> SubAssign<&CrownSeries<F>> for CrownSeries<F> {
    fn sub_assign(&mut self, rhs: &CrownSeries<F>) {
        assert_eq!(self.degree, rhs.degree, "crown series degree mismatch");
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a -= *b;
        }
        self.tail += rhs.tail;
    }
}
