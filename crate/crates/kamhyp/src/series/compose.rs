use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::coeff::CoeffSeries;
use super::crown::CrownSeries;
use super::norm::CrownDomain;
use crate::error::{KamError, Result};
use crate::scalar::{czero, is_zero, lit, to_f64, Real};

pub const DEFAULT_EXP_TAIL_TOL: f64 = 1e-16;
pub const DEFAULT_INVERSE_TOL: f64 = 1e-14;
pub const DEFAULT_MAX_INVERSE_ITERS: usize = 50;

/// Holomorphic map `(ξ, η) ↦ (x(ξ,η), y(ξ,η))` in the truncated ring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct SeriesMap<F> {
    pub x: CrownSeries<F>,
    pub y: CrownSeries<F>,
}

impl<F: Real> SeriesMap<F> {
    pub fn new(x: CrownSeries<F>, y: CrownSeries<F>) -> Self {
        assert_eq!(x.degree(), y.degree(), "map components must share the truncation degree");
        Self { x, y }
    }

    pub fn identity(degree: usize) -> Self {
        Self { x: CrownSeries::xi(degree), y: CrownSeries::eta(degree) }
    }

    pub fn zero(degree: usize) -> Self {
        Self { x: CrownSeries::zeros(degree), y: CrownSeries::zeros(degree) }
    }

    pub fn degree(&self) -> usize {
        self.x.degree()
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &SeriesMap<F>) -> SeriesMap<F> {
        let powers = y_powers(&inner.y);
        SeriesMap {
            x: compose_with_powers(&self.x, &inner.x, &powers),
            y: compose_with_powers(&self.y, &inner.x, &powers),
        }
    }

    /// `self − Id`.
    pub fn minus_identity(&self) -> SeriesMap<F> {
        let d = self.degree();
        SeriesMap { x: &self.x - &CrownSeries::xi(d), y: &self.y - &CrownSeries::eta(d) }
    }

    pub fn plus_identity(&self) -> SeriesMap<F> {
        let d = self.degree();
        SeriesMap { x: &self.x + &CrownSeries::xi(d), y: &self.y + &CrownSeries::eta(d) }
    }

    pub fn eval(&self, xi: Complex<F>, eta: Complex<F>) -> (Complex<F>, Complex<F>) {
        (self.x.eval(xi, eta), self.y.eval(xi, eta))
    }

    pub fn conjugate(&self) -> SeriesMap<F> {
        SeriesMap { x: self.x.conjugate(), y: self.y.conjugate() }
    }

    pub fn max_abs(&self) -> F {
        self.x.max_abs().max(self.y.max_abs())
    }

    pub fn max_imag(&self) -> F {
        self.x.max_imag().max(self.y.max_imag())
    }

    pub fn sub(&self, other: &SeriesMap<F>) -> SeriesMap<F> {
        SeriesMap { x: &self.x - &other.x, y: &self.y - &other.y }
    }

    pub fn with_degree(&self, degree: usize) -> SeriesMap<F> {
        SeriesMap { x: self.x.with_degree(degree), y: self.y.with_degree(degree) }
    }
}

fn y_powers<F: Real>(y: &CrownSeries<F>) -> Vec<CrownSeries<F>> {
    let d = y.degree();
    let mut powers = Vec::with_capacity(d + 1);
    powers.push(CrownSeries::one(d));
    for k in 1..=d {
        let next = powers[k - 1].mul_trunc(y);
        powers.push(next);
    }
    powers
}

fn compose_with_powers<F: Real>(h: &CrownSeries<F>, x: &CrownSeries<F>, ypow: &[CrownSeries<F>]) -> CrownSeries<F> {
    let d = h.degree();
    // H_m(Y) = Σ_n h_{m,n} Y^n, then Horner in X.
    let column = |m: usize| {
        let mut acc = CrownSeries::zeros(d);
        for (n, yp) in ypow.iter().enumerate().take(d - m + 1) {
            let c = h.get(m, n);
            if !is_zero(&c) {
                acc += &yp.scale(c);
            }
        }
        acc
    };
    let top = (0..=d).rev().find(|&m| (0..=(d - m)).any(|n| !is_zero(&h.get(m, n))));
    let Some(top) = top else {
        return CrownSeries::zeros(d);
    };
    let mut acc = column(top);
    for m in (0..top).rev() {
        acc = acc.mul_trunc(x);
        acc += &column(m);
    }
    acc
}

/// `h(x, y)` by substitution in the truncated ring.
pub fn compose<F: Real>(h: &CrownSeries<F>, x: &CrownSeries<F>, y: &CrownSeries<F>) -> Result<CrownSeries<F>> {
    if h.degree() != x.degree() || h.degree() != y.degree() {
        return Err(KamError::DegreeMismatch { left: h.degree(), right: x.degree().max(y.degree()) });
    }
    Ok(compose_with_powers(h, x, &y_powers(y)))
}

/// `a(Z)` for a univariate series `a` and a bivariate `Z`.
pub fn compose_univariate<F: Real>(a: &CoeffSeries<F>, z: &CrownSeries<F>) -> CrownSeries<F> {
    let d = z.degree();
    let mut acc = CrownSeries::zeros(d);
    for k in (0..=a.dz()).rev() {
        acc = acc.mul_trunc(z);
        acc.add_to(0, 0, a.coeff(k));
    }
    acc
}

/// `e^{a f}` in the truncated ring.
pub fn exp_series<F: Real>(f: &CrownSeries<F>, a: Complex<F>) -> Result<CrownSeries<F>> {
    exp_series_tol(f, a, lit(DEFAULT_EXP_TAIL_TOL))
}

pub fn exp_series_tol<F: Real>(f: &CrownSeries<F>, a: Complex<F>, tail_tol: F) -> Result<CrownSeries<F>> {
    let c0 = f.get(0, 0) * a;
    if c0.re.abs() >= lit(50.0) || !c0.norm().is_finite() {
        return Err(KamError::ExpOverflow(to_f64(c0.norm())));
    }
    let d = f.degree();
    let mut g = f.scale(a);
    g.set(0, 0, czero());
    let mut sum = CrownSeries::one(d);
    let mut term = CrownSeries::one(d);
    for k in 1..=(d + 1) {
        term = term.mul_trunc(&g).scale_real(F::one() / lit::<F>(k as f64));
        sum += &term;
        if term.max_abs() < tail_tol {
            break;
        }
    }
    Ok(sum.scale(c0.exp()))
}

/// `e^{ibα(ξη)}` as a bivariate series.
pub fn rotation_factor<F: Real>(alpha: &CoeffSeries<F>, b: F, degree: usize) -> Result<CrownSeries<F>> {
    let a = alpha.with_dz(degree / 2);
    Ok(CrownSeries::lift(&a.cis_series(b)?, degree))
}

/// `h(e^{ibα(ξη)}ξ + f, e^{−ibα(ξη)}η + g)`.
pub fn compose_rotated<F: Real>(
    h: &CrownSeries<F>,
    b: F,
    alpha: &CoeffSeries<F>,
    f: &CrownSeries<F>,
    g: &CrownSeries<F>,
) -> Result<CrownSeries<F>> {
    if !(b.abs() <= F::one()) {
        return Err(KamError::RotationRange(to_f64(b)));
    }
    let d = h.degree();
    if f.degree() != d || g.degree() != d {
        return Err(KamError::DegreeMismatch { left: d, right: f.degree().max(g.degree()) });
    }
    let rot = rotation_factor(alpha, b, d)?;
    let rot_inv = rotation_factor(alpha, -b, d)?;
    let x = &rot.mul_xi() + f;
    let y = &rot_inv.mul_eta() + g;
    compose(h, &x, &y)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct InverseOptions<F> {
    pub tol: F,
    pub max_iters: usize,
}

impl<F: Real> Default for InverseOptions<F> {
    fn default() -> Self {
        Self { tol: lit(DEFAULT_INVERSE_TOL), max_iters: DEFAULT_MAX_INVERSE_ITERS }
    }
}

/// Smallness gate `‖U‖_{O,β′,r′} < β′(r′ − r″)/(30 r′)` for the near-identity inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct InverseGate<F> {
    pub domain: CrownDomain<F>,
    pub r_inner: F,
}

impl<F: Real> InverseGate<F> {
    pub fn limit(&self) -> F {
        let rp = self.domain.radius;
        self.domain.beta * (rp - self.r_inner) / (lit::<F>(30.0) * rp)
    }

    pub fn check(&self, u: &SeriesMap<F>) -> Result<()> {
        let norm = self.domain.norm_pair(&u.x, &u.y)?;
        let limit = self.limit();
        if !(norm < limit) {
            return Err(KamError::InverseTooLarge { norm: to_f64(norm), limit: to_f64(limit) });
        }
        Ok(())
    }
}

/// Solves `(Id + U)∘(Id + V) = Id` by the fixed point `V = −U∘(Id + V)`.
pub fn invert_near_identity<F: Real>(
    u: &SeriesMap<F>,
    opts: &InverseOptions<F>,
    gate: Option<&InverseGate<F>>,
) -> Result<SeriesMap<F>> {
    if let Some(gate) = gate {
        gate.check(u)?;
    }
    let d = u.degree();
    let id = SeriesMap::identity(d);
    let mut v = SeriesMap::zero(d);
    let mut change = F::infinity();
    for _ in 0..opts.max_iters {
        let arg = SeriesMap { x: &id.x + &v.x, y: &id.y + &v.y };
        let w = u.compose(&arg);
        let next = SeriesMap { x: -w.x, y: -w.y };
        change = next.sub(&v).max_abs();
        let scale = F::one().max(next.max_abs());
        v = next;
        if change <= opts.tol * scale {
            return Ok(v);
        }
    }
    Err(KamError::InverseNonConvergence { iters: opts.max_iters, change: to_f64(change) })
}

/// `(Id + U)` composed with `(Id + V)`, minus the identity; the inverse residual.
pub fn inverse_residual<F: Real>(u: &SeriesMap<F>, v: &SeriesMap<F>) -> SeriesMap<F> {
    u.plus_identity().compose(&v.plus_identity()).minus_identity()
}
