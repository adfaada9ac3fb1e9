//! Real-analytic surfaces `z₂ = Q_γ(z₁, z̄₁) + f(z₁, z̄₁)` and their
//! Moser–Webster involutions.
//!
//! Surface series are bivariate in `(z, w)` with `w` standing for `z̄₁`; they reuse
//! [`CrownSeries`] as plain truncated bivariate series.

use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::involution::InvolutionPair;
use crate::series::{invert_near_identity, CoeffSeries, CrownSeries, InverseOptions, SeriesMap};

pub const DECK_TOL: f64 = 1e-13;

/// Anything that maps points of `C²` (transform chains, series maps, the identity).
pub trait PointTransform {
    fn apply(&self, xi: C, eta: C) -> Result<(C, C)>;
}

impl PointTransform for SeriesMap<f64> {
    fn apply(&self, xi: C, eta: C) -> Result<(C, C)> {
        Ok(self.eval(xi, eta))
    }
}

pub struct IdentityTransform;

impl PointTransform for IdentityTransform {
    fn apply(&self, xi: C, eta: C) -> Result<(C, C)> {
        Ok((xi, eta))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub m: usize,
    pub n: usize,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

/// `z₂ = |z₁|² + γ(z₁² + z̄₁²) + f(z₁, z̄₁)` with `γ > 1/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BishopSurface {
    pub gamma: f64,
    pub f: CrownSeries<f64>,
}

impl BishopSurface {
    pub fn new(gamma: f64, f: CrownSeries<f64>) -> Result<Self> {
        let s = Self { gamma, f };
        s.validate()?;
        Ok(s)
    }

    pub fn quadric(gamma: f64, degree: usize) -> Result<Self> {
        Self::new(gamma, CrownSeries::zeros(degree))
    }

    pub fn from_monomials(gamma: f64, degree: usize, terms: &[Monomial]) -> Result<Self> {
        let mut f = CrownSeries::zeros(degree);
        for t in terms {
            if t.m + t.n > degree {
                return Err(KamError::Structural(format!(
                    "monomial z^{} w^{} exceeds truncation degree {degree}",
                    t.m, t.n
                )));
            }
            f.add_to(t.m, t.n, C::new(t.re, t.im));
        }
        Self::new(gamma, f)
    }

    pub fn degree(&self) -> usize {
        self.f.degree()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.5) || !self.gamma.is_finite() {
            return Err(KamError::NotHyperbolic(self.gamma));
        }
        if let Some(o) = self.f.order_above(0.0) {
            if o <= 2 {
                return Err(KamError::Structural(format!("perturbation has a term of degree {o} ≤ 2")));
            }
        }
        let tol = 1e-10 * self.f.max_abs().max(1.0);
        if self.f.max_imag() > tol {
            return Err(KamError::NotReal { what: "surface perturbation".into(), imag: self.f.max_imag(), tol });
        }
        Ok(())
    }

    /// `Q_γ(z, w) + f(z, w)` as a series.
    pub fn equation(&self) -> CrownSeries<f64> {
        let d = self.degree();
        let mut q = self.f.clone();
        q.add_to(1, 1, C::new(1.0, 0.0));
        q.add_to(2, 0, C::new(self.gamma, 0.0));
        q.add_to(0, 2, C::new(self.gamma, 0.0));
        q.with_degree(d)
    }
}

/// `e^{iλ/2}` root of `γX² − X + γ = 0` and the change of basis to `(ξ, η)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalFrame {
    pub gamma: f64,
    pub lambda: f64,
    pub root: C,
    /// Rows give `ξ` and `η` as linear forms in `(z, w)`.
    pub change_of_basis: [[C; 2]; 2],
}

impl DiagonalFrame {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.5) || !gamma.is_finite() {
            return Err(KamError::NotHyperbolic(gamma));
        }
        let (a, b) = quadratic_roots(gamma);
        let root = if a.im >= 0.0 { a } else { b };
        // λ/2 = arg(root) ∈ [0, π], hence λ ∈ [0, 2π] ⊂ [0, 4π)
        let lambda = 2.0 * root.arg().rem_euclid(2.0 * std::f64::consts::PI);
        let c = root.sqrt().conj() / std::f64::consts::SQRT_2;
        let s = -1.0;
        let frame = Self { gamma, lambda, root, change_of_basis: [[c, c.conj()], [s * c.conj(), s * c]] };
        frame.check_linear_part()?;
        Ok(frame)
    }

    pub fn to_diag(&self, z: C, w: C) -> (C, C) {
        let m = &self.change_of_basis;
        (m[0][0] * z + m[0][1] * w, m[1][0] * z + m[1][1] * w)
    }

    pub fn inverse(&self) -> Result<[[C; 2]; 2]> {
        let m = &self.change_of_basis;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det.norm() < 1e-14 {
            return Err(KamError::Singular("diagonalizing change of basis".into()));
        }
        Ok([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
    }

    pub fn from_diag(&self, xi: C, eta: C) -> Result<(C, C)> {
        let inv = self.inverse()?;
        Ok((inv[0][0] * xi + inv[0][1] * eta, inv[1][0] * xi + inv[1][1] * eta))
    }

    /// Checks `P T₁ P⁻¹ = [[0, e^{iλ/2}], [e^{−iλ/2}, 0]]`.
    fn check_linear_part(&self) -> Result<()> {
        let t1 = [[C::new(1.0, 0.0), C::new(0.0, 0.0)], [C::new(-1.0 / self.gamma, 0.0), C::new(-1.0, 0.0)]];
        let p = self.change_of_basis;
        let pt = mat_mul(&p, &t1);
        let got = mat_mul(&pt, &self.inverse()?);
        let want = [[C::new(0.0, 0.0), self.root], [self.root.conj(), C::new(0.0, 0.0)]];
        let err = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| (got[i][j] - want[i][j]).norm()).fold(0.0, f64::max);
        if err > 1e-12 {
            return Err(KamError::Singular(format!("linear part not diagonalized (error {err:.3e})")));
        }
        Ok(())
    }

    fn linear_map(m: [[C; 2]; 2], degree: usize) -> SeriesMap<f64> {
        let row = |r: [C; 2]| {
            let mut s = CrownSeries::zeros(degree);
            s.set(1, 0, r[0]);
            s.set(0, 1, r[1]);
            s
        };
        SeriesMap { x: row(m[0]), y: row(m[1]) }
    }
}

fn mat_mul(a: &[[C; 2]; 2], b: &[[C; 2]; 2]) -> [[C; 2]; 2] {
    let mut out = [[C::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// Roots of `γX² − X + γ = 0`.
pub fn quadratic_roots(gamma: f64) -> (C, C) {
    let disc = C::new(1.0 - 4.0 * gamma * gamma, 0.0).sqrt();
    let two_g = 2.0 * gamma;
    ((C::new(1.0, 0.0) + disc) / two_g, (C::new(1.0, 0.0) - disc) / two_g)
}

/// `φ₁` with `Q_γ(z, φ₁) + f(z, φ₁) = Q_γ(z, w) + f(z, w)` and `φ₁ = −γ⁻¹z − w + O²`.
///
/// Solved as the fixed point of `φ = −z/γ − w − γ⁻¹Δf(z, φ, w)`, where `Δf` is the
/// divided difference of `f` in its second variable; each sweep fixes one more degree.
pub fn deck_transformation(m: &BishopSurface) -> Result<CrownSeries<f64>> {
    m.validate()?;
    let d = m.degree();
    let g = m.gamma;
    let mut linear = CrownSeries::zeros(d);
    linear.set(1, 0, C::new(-1.0 / g, 0.0));
    linear.set(0, 1, C::new(-1.0, 0.0));
    if m.f.is_zero() {
        return Ok(linear);
    }
    let z = CrownSeries::xi(d);
    let w = CrownSeries::eta(d);
    let wpow = powers(&w, d);
    let zpow = powers(&z, d);
    let mut phi = linear.clone();
    for _ in 0..=d {
        let ppow = powers(&phi, d);
        let mut delta = CrownSeries::zeros(d);
        for (a, n, c) in m.f.terms() {
            if n == 0 {
                continue;
            }
            let mut dd = CrownSeries::zeros(d);
            for i in 0..n {
                dd += &(&ppow[i] * &wpow[n - 1 - i]);
            }
            delta += &(&zpow[a] * &dd).scale(c);
        }
        let next = &linear - &delta.scale_real(1.0 / g);
        let change = (&next - &phi).max_abs();
        phi = next;
        if change <= DECK_TOL * phi.max_abs().max(1.0) {
            break;
        }
    }
    let res = deck_residual(m, &phi)?;
    if res > 1e-9 * m.f.max_abs().max(1.0) {
        return Err(KamError::Deck(format!("defining identity residual {res:.3e}")));
    }
    Ok(phi)
}

fn powers(x: &CrownSeries<f64>, d: usize) -> Vec<CrownSeries<f64>> {
    let mut out = vec![CrownSeries::one(d)];
    for k in 1..=d {
        let next = &out[k - 1] * x;
        out.push(next);
    }
    out
}

/// `max |coeff|` of `F(z, φ₁) − F(z, w)` with `F = Q_γ + f`.
pub fn deck_residual(m: &BishopSurface, phi: &CrownSeries<f64>) -> Result<f64> {
    let d = m.degree();
    let eqn = m.equation();
    let lhs = crate::series::compose(&eqn, &CrownSeries::xi(d), phi)?;
    Ok((&lhs - &eqn).max_abs())
}

/// `τ₁ᵒ(z, w) = (z, φ₁(z, w))`.
pub fn deck_map(m: &BishopSurface) -> Result<SeriesMap<f64>> {
    let d = m.degree();
    Ok(SeriesMap { x: CrownSeries::xi(d), y: deck_transformation(m)? })
}

/// `τ₁ᵒ` in diagonal coordinates, in the form `(e^{iλ/2}η + p, e^{−iλ/2}ξ + q)` with `α ≡ λ`.
pub fn diagonalize(m: &BishopSurface) -> Result<(DiagonalFrame, InvolutionPair<f64>)> {
    let frame = DiagonalFrame::new(m.gamma)?;
    let d = m.degree();
    let root_check = frame.root + frame.root.conj() - C::new(1.0 / m.gamma, 0.0);
    if root_check.norm() > 1e-12 {
        return Err(KamError::Singular(format!("root sum off by {:.3e}", root_check.norm())));
    }
    let p = DiagonalFrame::linear_map(frame.change_of_basis, d);
    let pinv = DiagonalFrame::linear_map(frame.inverse()?, d);
    let tau = p.compose(&deck_map(m)?.compose(&pinv));
    let alpha = CoeffSeries::constant(C::new(frame.lambda, 0.0), d / 2);
    let pair = InvolutionPair::from_map(alpha, &tau, 1)?;
    Ok((frame, clean(pair, 1e-15)))
}

fn clean(mut t: InvolutionPair<f64>, tol: f64) -> InvolutionPair<f64> {
    for s in [&mut t.p, &mut t.q] {
        let d = s.degree();
        let terms: Vec<_> = s.terms().collect();
        for (m, n, c) in terms {
            if c.norm() <= tol {
                s.set(m, n, C::new(0.0, 0.0));
            }
        }
        debug_assert_eq!(s.degree(), d);
    }
    t
}

/// Maps and surface series produced from an involution pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    /// `φ = (φ₁, φ₂)`, `φ₁ = ξ + ξ∘τ₁`, `φ₂ = conj(φ₁∘ρ)`.
    pub phi: SeriesMap<f64>,
    /// `Φ = (ξ∘τ₁)·ξ`.
    pub big_phi: CrownSeries<f64>,
    /// `Φ∘φ⁻¹` in `(z', w')`.
    pub raw: CrownSeries<f64>,
    /// Bishop invariant read off the quadratic part of `raw`.
    pub gamma: f64,
    /// `raw` after `z' = κz`, `z₂ ↦ μz₂ − νz²`, so the quadratic part is `Q_γ`.
    pub bishop: CrownSeries<f64>,
}

impl Reconstruction {
    /// `(z₁, z₂) = (φ₁, Φ)` at a point in diagonal coordinates.
    pub fn surface_point(&self, xi: C, eta: C) -> (C, C, C) {
        (self.phi.x.eval(xi, eta), self.phi.y.eval(xi, eta), self.big_phi.eval(xi, eta))
    }
}

pub fn reconstruct_surface(t: &InvolutionPair<f64>) -> Result<Reconstruction> {
    let d = t.degree();
    let tau = t.tau1()?;
    let xi = CrownSeries::xi(d);
    let phi1 = &xi + &tau.x;
    let phi2 = phi1.conjugate();
    let big_phi = &tau.x * &xi;
    let phi = SeriesMap { x: phi1, y: phi2 };

    let l = [[phi.x.get(1, 0), phi.x.get(0, 1)], [phi.y.get(1, 0), phi.y.get(0, 1)]];
    let det = l[0][0] * l[1][1] - l[0][1] * l[1][0];
    if det.norm() < 1e-12 {
        return Err(KamError::NotInvertible(det.norm()));
    }
    let linv = [[l[1][1] / det, -l[0][1] / det], [-l[1][0] / det, l[0][0] / det]];
    let linv_map = DiagonalFrame::linear_map(linv, d);
    // φ = L∘(Id + U) with U = L⁻¹∘φ − Id
    let u = linv_map.compose(&phi).minus_identity();
    let v = invert_near_identity(&u, &InverseOptions::default(), None)?;
    let phi_inv = v.plus_identity().compose(&linv_map);
    let raw = crate::series::compose(&big_phi, &phi_inv.x, &phi_inv.y)?;
    let (gamma, bishop) = bishop_normalize(&raw)?;
    Ok(Reconstruction { phi, big_phi, raw, gamma, bishop })
}

/// Brings `A z² + B zw + C w² + …` to `zw + γ(z² + w²) + …` by `z = κz'`,
/// `z₂ ↦ μ z₂ − ν z²`; returns `γ = |C/B|` and the transformed series.
pub fn bishop_normalize(raw: &CrownSeries<f64>) -> Result<(f64, CrownSeries<f64>)> {
    let (b, c) = (raw.get(1, 1), raw.get(0, 2));
    if b.norm() < 1e-14 {
        return Err(KamError::Singular("no |z|² term in the reconstructed surface".into()));
    }
    let ratio = c / b;
    let gamma = ratio.norm();
    // κ = e^{iθ} with C/B · e^{−2iθ} = γ
    let kappa = C::from_polar(1.0, 0.5 * ratio.arg());
    let mu = 1.0 / b;
    let d = raw.degree();
    let mut out = CrownSeries::zeros(d);
    for (m, n, coef) in raw.terms() {
        let scale = kappa.powu(m as u32) * kappa.conj().powu(n as u32);
        out.set(m, n, coef * scale * mu);
    }
    out.set(2, 0, C::new(gamma, 0.0));
    Ok((gamma, out))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperbolaPoint {
    pub omega: f64,
    pub arg_index: usize,
    pub modulus_index: usize,
    pub xi: C,
    pub eta: C,
    pub z1: C,
    pub z2: C,
    pub is_real_branch: bool,
    /// `|w₁ − conj(z₁)|` on real-branch points, zero elsewhere.
    pub real_residual: f64,
}

pub const HYPERBOLA_ARGS: usize = 8;

/// Samples `{ξη = ω}` at `n_pts` log-spaced moduli in `(|ω|/R, R)` and
/// [`HYPERBOLA_ARGS`] arguments (index 0 and `HYPERBOLA_ARGS/2` are the real branches),
/// maps them through `psi` and then `(φ₁, Φ)`.
pub fn hyperbola_image(
    t: &InvolutionPair<f64>,
    psi: &dyn PointTransform,
    omega: f64,
    radius: f64,
    n_pts: usize,
) -> Result<Vec<HyperbolaPoint>> {
    if !(omega != 0.0 && omega.abs() < radius * radius) {
        return Err(KamError::OmegaOutOfRange(omega, format!("(−R², R²)\\{{0}} with R = {radius}")));
    }
    if n_pts == 0 {
        return Ok(Vec::new());
    }
    let rec = reconstruct_surface(t)?;
    let lo = (omega.abs() / radius).ln();
    let hi = radius.ln();
    let mut out = Vec::with_capacity(n_pts * HYPERBOLA_ARGS);
    for k in 0..n_pts {
        // interior points of the open interval
        let s = (k as f64 + 0.5) / n_pts as f64;
        let modulus = (lo + s * (hi - lo)).exp();
        for j in 0..HYPERBOLA_ARGS {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / HYPERBOLA_ARGS as f64;
            let xi = C::from_polar(modulus, theta);
            let eta = C::new(omega, 0.0) / xi;
            let real = j == 0 || 2 * j == HYPERBOLA_ARGS;
            let (x, y) = psi.apply(xi, eta)?;
            let (z1, w1, z2) = rec.surface_point(x, y);
            let real_residual = if real { (w1 - z1.conj()).norm() } else { 0.0 };
            out.push(HyperbolaPoint {
                omega,
                arg_index: j,
                modulus_index: k,
                xi,
                eta,
                z1,
                z2,
                is_real_branch: real,
                real_residual,
            });
        }
    }
    Ok(out)
}
