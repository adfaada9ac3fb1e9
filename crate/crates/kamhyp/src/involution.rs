//! Involution pairs `(τ₁, τ₂ = ρτ₁ρ)`, the reversible map `σ = τ₁∘τ₂`, skew
//! terms and structural residuals.
//!
//! Convention (fixed throughout the crate): `τ₁(ξ,η) = (e^{iα(ξη)/2}η + p,
//! e^{−iα(ξη)/2}ξ + q)` with `α` real-coefficient, `ρ(ξ,η) = (ξ̄, η̄)`, so
//! `τ₂(ξ,η) = (e^{−iα/2}η + p̄, e^{iα/2}ξ + q̄)` and
//! `σ(ξ,η) = (e^{iα}ξ + f, e^{−iα}η + g)`.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{KamError, Result};
use crate::scalar::{lit, to_f64, Real};
use crate::series::{
    compose, compose_univariate, invert_near_identity, CoeffSeries, CrownDomain, CrownSeries, InverseOptions,
    SeriesMap,
};

pub const DEFAULT_STRUCTURAL_TOL: f64 = 1e-9;
pub const DEFAULT_REALNESS_TOL: f64 = 1e-10;

/// `τ₁` given by `(α, p, q)`; `s_order` is the first `k ≥ 1` with `α^{(k)}(0) ≠ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct InvolutionPair<F> {
    pub alpha: CoeffSeries<F>,
    pub p: CrownSeries<F>,
    pub q: CrownSeries<F>,
    pub s_order: usize,
}

/// A map of the swapped form `(e^{iκα/2}η + p, e^{−iκα/2}ξ + q)` with `κ = ±1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct SwapMap<F> {
    pub alpha: CoeffSeries<F>,
    pub sign: i8,
    pub p: CrownSeries<F>,
    pub q: CrownSeries<F>,
}

/// `σ = (e^{iα}ξ + f, e^{−iα}η + g)`, tagged with a fingerprint of the pair it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct ReversibleMap<F> {
    pub alpha: CoeffSeries<F>,
    pub f: CrownSeries<F>,
    pub g: CrownSeries<F>,
    pub source: u64,
}

/// Half-angle rotation factors `e^{±ikα(ξη)/2}` as bivariate series.
pub fn half_rotation<F: Real>(alpha: &CoeffSeries<F>, k: F, degree: usize) -> Result<CrownSeries<F>> {
    let a = alpha.with_dz(degree / 2);
    Ok(CrownSeries::lift(&a.cis_series(k * lit(0.5))?, degree))
}

impl<F: Real> SwapMap<F> {
    pub fn degree(&self) -> usize {
        self.p.degree()
    }

    pub fn series(&self) -> Result<SeriesMap<F>> {
        let d = self.degree();
        let k = F::from_i8(self.sign).unwrap_or_else(F::one);
        let e = half_rotation(&self.alpha, k, d)?;
        let ei = half_rotation(&self.alpha, -k, d)?;
        Ok(SeriesMap { x: &e.mul_eta() + &self.p, y: &ei.mul_xi() + &self.q })
    }

    /// `ρ∘self∘ρ`.
    pub fn reflect(&self) -> SwapMap<F> {
        SwapMap { alpha: self.alpha.clone(), sign: -self.sign, p: self.p.conjugate(), q: self.q.conjugate() }
    }

    pub fn eval(&self, xi: Complex<F>, eta: Complex<F>) -> (Complex<F>, Complex<F>) {
        let k = F::from_i8(self.sign).unwrap_or_else(F::one);
        let a = self.alpha.eval(xi * eta);
        let e = (Complex::new(F::zero(), k * lit(0.5)) * a).exp();
        (e * eta + self.p.eval(xi, eta), xi / e + self.q.eval(xi, eta))
    }
}

impl<F: Real> InvolutionPair<F> {
    pub fn new(alpha: CoeffSeries<F>, p: CrownSeries<F>, q: CrownSeries<F>, s_order: usize) -> Result<Self> {
        if p.degree() != q.degree() {
            return Err(KamError::DegreeMismatch { left: p.degree(), right: q.degree() });
        }
        let alpha = alpha.with_dz(p.degree() / 2);
        Ok(Self { alpha, p, q, s_order })
    }

    /// `p = q = 0`.
    pub fn linear(alpha: CoeffSeries<F>, degree: usize, s_order: usize) -> Self {
        Self {
            alpha: alpha.with_dz(degree / 2),
            p: CrownSeries::zeros(degree),
            q: CrownSeries::zeros(degree),
            s_order,
        }
    }

    pub fn degree(&self) -> usize {
        self.p.degree()
    }

    /// `λ = α(0)`.
    pub fn lambda(&self) -> F {
        self.alpha.coeff(0).re
    }

    pub fn tau1_map(&self) -> SwapMap<F> {
        SwapMap { alpha: self.alpha.clone(), sign: 1, p: self.p.clone(), q: self.q.clone() }
    }

    pub fn tau1(&self) -> Result<SeriesMap<F>> {
        self.tau1_map().series()
    }

    pub fn tau2(&self) -> Result<SeriesMap<F>> {
        tau2_of(self).series()
    }

    pub fn eval_tau1(&self, xi: Complex<F>, eta: Complex<F>) -> (Complex<F>, Complex<F>) {
        self.tau1_map().eval(xi, eta)
    }

    pub fn eval_tau2(&self, xi: Complex<F>, eta: Complex<F>) -> (Complex<F>, Complex<F>) {
        tau2_of(self).eval(xi, eta)
    }

    /// Rebuilds a pair from the components of a swapped-form map and a rotation exponent.
    pub fn from_map(alpha: CoeffSeries<F>, map: &SeriesMap<F>, s_order: usize) -> Result<Self> {
        let d = map.degree();
        let alpha = alpha.with_dz(d / 2);
        let e = half_rotation(&alpha, F::one(), d)?;
        let ei = half_rotation(&alpha, -F::one(), d)?;
        Ok(Self { p: &map.x - &e.mul_eta(), q: &map.y - &ei.mul_xi(), alpha, s_order })
    }

    /// Hash of the series data, used to detect a stale `σ`.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let mut put = |c: &Complex<F>| {
            to_f64(c.re).to_bits().hash(&mut h);
            to_f64(c.im).to_bits().hash(&mut h);
        };
        self.alpha.coeffs().iter().for_each(&mut put);
        self.p.coeffs().iter().for_each(&mut put);
        self.q.coeffs().iter().for_each(&mut put);
        h.finish()
    }

    pub fn with_degree(&self, degree: usize) -> Self {
        Self {
            alpha: self.alpha.with_dz(degree / 2),
            p: self.p.with_degree(degree),
            q: self.q.with_degree(degree),
            s_order: self.s_order,
        }
    }

    /// Measured `ε = 10·max(‖p‖, ‖q‖)`.
    pub fn measured_eps(&self, domain: &CrownDomain<F>) -> Result<F> {
        Ok(lit::<F>(10.0) * domain.norm_pair(&self.p, &self.q)?)
    }
}

impl<F: Real> ReversibleMap<F> {
    pub fn degree(&self) -> usize {
        self.f.degree()
    }

    pub fn series(&self) -> Result<SeriesMap<F>> {
        let d = self.degree();
        let e = half_rotation(&self.alpha, lit(2.0), d)?;
        let ei = half_rotation(&self.alpha, lit(-2.0), d)?;
        Ok(SeriesMap { x: &e.mul_xi() + &self.f, y: &ei.mul_eta() + &self.g })
    }

    pub fn is_stale_for(&self, t: &InvolutionPair<F>) -> bool {
        self.source != t.fingerprint()
    }

    /// Skew term of `σ`: `e^{−iα}ηf + e^{iα}ξg`.
    pub fn skew(&self) -> Result<CrownSeries<F>> {
        let d = self.degree();
        let e = half_rotation(&self.alpha, lit(2.0), d)?;
        let ei = half_rotation(&self.alpha, lit(-2.0), d)?;
        Ok(&(&ei * &self.f.mul_eta()) + &(&e * &self.g.mul_xi()))
    }
}

/// Series data of `ρ∘τ₁∘ρ`: rotation exponent negated, `p, q` conjugated.
pub fn tau2_of<F: Real>(t: &InvolutionPair<F>) -> SwapMap<F> {
    t.tau1_map().reflect()
}

/// `σ = τ₁∘τ₂` by substitution of `τ₂` into `τ₁` in the truncated ring.
pub fn compose_sigma<F: Real>(t: &InvolutionPair<F>) -> Result<ReversibleMap<F>> {
    let d = t.degree();
    let dz = d / 2;
    let tau2 = tau2_of(t).series()?;
    let (x, y) = (&tau2.x, &tau2.y);
    let z = x * y;
    let a = t.alpha.with_dz(dz);
    let e_half = compose_univariate(&a.cis_series(lit(0.5))?, &z);
    let e_half_inv = compose_univariate(&a.cis_series(lit(-0.5))?, &z);
    let pq = SeriesMap { x: t.p.clone(), y: t.q.clone() }.compose(&tau2);
    let s1 = &(&e_half * y) + &pq.x;
    let s2 = &(&e_half_inv * x) + &pq.y;
    let e = half_rotation(&a, lit(2.0), d)?;
    let ei = half_rotation(&a, lit(-2.0), d)?;
    Ok(ReversibleMap { alpha: a, f: &s1 - &e.mul_xi(), g: &s2 - &ei.mul_eta(), source: t.fingerprint() })
}

/// `e^{iα/2}ηq + e^{−iα/2}ξp`.
pub fn skew_term<F: Real>(t: &InvolutionPair<F>) -> Result<CrownSeries<F>> {
    skew_operator_L(&t.alpha.scale_real(lit(0.5)), &t.p, &t.q)
}

/// `L_h(p₁, p₂) = e^{−ih(ξη)}ξp₁ + e^{ih(ξη)}ηp₂`.
#[allow(non_snake_case)]
pub fn skew_operator_L<F: Real>(h: &CoeffSeries<F>, p1: &CrownSeries<F>, p2: &CrownSeries<F>) -> Result<CrownSeries<F>> {
    let d = p1.degree();
    let h = h.with_dz(d / 2);
    let e = CrownSeries::lift(&h.cis_series(F::one())?, d);
    let ei = CrownSeries::lift(&h.cis_series(-F::one())?, d);
    Ok(&(&ei * &p1.mul_xi()) + &(&e * &p2.mul_eta()))
}

/// `h(e^{−iα/2}η, e^{iα/2}ξ)` (the substitution appearing in `σ`'s first-order part).
pub fn compose_swapped<F: Real>(h: &CrownSeries<F>, alpha: &CoeffSeries<F>, sign: F) -> Result<CrownSeries<F>> {
    let d = h.degree();
    let e = half_rotation(alpha, sign, d)?;
    let ei = half_rotation(alpha, -sign, d)?;
    compose(h, &ei.mul_eta(), &e.mul_xi())
}

/// Exact involution `φ⁻¹∘L_α∘φ` with `L_α = (e^{iα(ξη)/2}η, e^{−iα(ξη)/2}ξ)`.
pub fn involution_from_conjugacy<F: Real>(alpha: &CoeffSeries<F>, phi_minus_id: &SeriesMap<F>, s_order: usize) -> Result<InvolutionPair<F>> {
    let d = phi_minus_id.degree();
    let lin = InvolutionPair::linear(alpha.clone(), d, s_order);
    let l = lin.tau1()?;
    let phi = phi_minus_id.plus_identity();
    let inv = invert_near_identity(phi_minus_id, &InverseOptions::default(), None)?.plus_identity();
    let tau = inv.compose(&l.compose(&phi));
    InvolutionPair::from_map(lin.alpha, &tau, s_order)
}

/// The involution whose `p` equals `p_seed`, obtained as `φ⁻¹∘L_α∘φ` with
/// `φ = (ξ, η + w)` and `w` corrected until `p` matches the seed.
pub fn involution_from_seed<F: Real>(alpha: &CoeffSeries<F>, p_seed: &CrownSeries<F>, s_order: usize, max_iters: usize) -> Result<InvolutionPair<F>> {
    let d = p_seed.degree();
    let ei = half_rotation(alpha, -F::one(), d)?;
    let mut w = &ei * p_seed;
    let mut t = involution_from_conjugacy(alpha, &SeriesMap { x: CrownSeries::zeros(d), y: w.clone() }, s_order)?;
    for _ in 0..max_iters {
        let err = p_seed - &t.p;
        if err.max_abs() <= lit::<F>(1e-15) * F::one().max(p_seed.max_abs()) {
            break;
        }
        w += &(&ei * &err);
        t = involution_from_conjugacy(alpha, &SeriesMap { x: CrownSeries::zeros(d), y: w.clone() }, s_order)?;
    }
    Ok(t)
}

/// Exact involution preserving `ξη`: conjugacy of `L_α` by `(ξ(1+a), η/(1+a))`.
pub fn product_preserving_involution<F: Real>(alpha: &CoeffSeries<F>, a: &CrownSeries<F>, s_order: usize) -> Result<InvolutionPair<F>> {
    let d = a.degree();
    let one = CrownSeries::one(d);
    let x = (&one + a).mul_xi();
    // 1/(1+a) by the geometric series in the truncated ring
    let mut inv = CrownSeries::one(d);
    let mut term = CrownSeries::one(d);
    let neg = -a;
    for _ in 0..=d {
        term = &term * &neg;
        if term.max_abs() == F::zero() {
            break;
        }
        inv += &term;
    }
    let y = inv.mul_eta();
    let phi = SeriesMap { x, y };
    involution_from_conjugacy(alpha, &phi.minus_identity(), s_order)
}

/// One measured quantity paired with its analytic bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

impl BoundCheck {
    pub fn new(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self { name: name.into(), pass: measured.is_finite() && measured < bound, measured, bound }
    }
}

/// Norm parameters used by the residual report: `(O, β, r)` plus the shrunk `(β̃, r⁽⁷⁾)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct ResidualParams<F> {
    pub domain: CrownDomain<F>,
    pub beta_tilde: F,
    pub r7: F,
}

impl<F: Real> ResidualParams<F> {
    pub fn new(domain: CrownDomain<F>, beta_tilde: F, r7: F) -> Self {
        Self { domain, beta_tilde, r7 }
    }

    /// `β̃ = β/2`, `r⁽⁷⁾ = 15r/16` (the intermediate radius for `r₊ = r/2`).
    pub fn simple(domain: CrownDomain<F>) -> Self {
        let bt = domain.beta * lit(0.5);
        let r7 = domain.radius * lit(15.0 / 16.0);
        Self { domain, beta_tilde: bt, r7 }
    }

    pub fn shrunk(&self) -> CrownDomain<F> {
        self.domain.at(self.beta_tilde, self.r7)
    }

    fn coeff_norm(&self, h: &CoeffSeries<F>) -> F {
        let d = &self.domain;
        d.omegas.iter().fold(F::zero(), |m, w| m.max(h.sup_on_circle(*w, self.beta_tilde, d.boundary_samples)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuralReport {
    pub eps: f64,
    pub involution: f64,
    pub tau2_involution: f64,
    pub reversibility: f64,
    pub skew: f64,
    pub sigma_skew: f64,
    pub checks: Vec<BoundCheck>,
}

impl StructuralReport {
    pub fn max_structural(&self) -> f64 {
        self.involution.max(self.tau2_involution).max(self.reversibility)
    }
}

/// Involution, reversibility, skew and coefficient-identity residuals of `t`.
pub fn structural_residuals<F: Real>(t: &InvolutionPair<F>, rp: &ResidualParams<F>) -> Result<StructuralReport> {
    rp.domain.validate()?;
    let small = rp.shrunk();
    small.validate()?;
    let d = t.degree();
    let dz = d / 2;
    let id = SeriesMap::identity(d);
    let tau1 = t.tau1()?;
    let tau2 = t.tau2()?;
    let inv1 = tau1.compose(&tau1).sub(&id);
    let inv2 = tau2.compose(&tau2).sub(&id);
    let sigma = compose_sigma(t)?;
    let sig = sigma.series()?;
    let rev = sig.conjugate().compose(&sig).sub(&id);
    let dom = &rp.domain;
    let involution = dom.norm_pair(&inv1.x, &inv1.y)?;
    let tau2_involution = dom.norm_pair(&inv2.x, &inv2.y)?;
    let reversibility = dom.norm_pair(&rev.x, &rev.y)?;
    let skew = skew_term(t)?;
    let skew_norm = dom.norm(&skew)?;
    let sigma_skew_series = sigma.skew()?;
    let sigma_skew = small.norm(&sigma_skew_series)?;
    let eps = t.measured_eps(dom)?;
    let e = to_f64(eps);
    let r7 = to_f64(rp.r7);
    let e3116 = e.powf(31.0 / 16.0);
    let e6132 = e.powf(61.0 / 32.0);

    let a = t.alpha.with_dz(dz);
    let eh = |k: f64| a.cis_series(lit::<F>(0.5 * k));
    let z = CoeffSeries::z(dz);
    let pc = |l: usize, j: usize| t.p.crown_coeff(l, j);
    let qc = |l: usize, j: usize| t.q.crown_coeff(l, j);
    let mut checks = Vec::new();

    // (ξη)(e^{iα/2}q_{1,0} + e^{−iα/2}p_{0,1})
    let core = &(&eh(1.0)? * &qc(1, 0)) + &(&eh(-1.0)? * &pc(0, 1));
    checks.push(BoundCheck::new("pq_0110", to_f64(rp.coeff_norm(&(&z * &core))), r7 * e3116 / 80.0));
    for l in 1..=3usize.min(d.saturating_sub(1)) {
        let lf = l as f64;
        let lhs = &(&z * &(&(&eh(1.0)? * &qc(l + 1, 0)) + &(&eh(-(lf + 1.0))? * &pc(0, l + 1))))
            + &(&(&eh(-1.0)? * &pc(l - 1, 0)) + &(&eh(-(lf - 1.0))? * &qc(0, l - 1)));
        checks.push(BoundCheck::new(
            format!("pq_l+-1[l={l}]"),
            to_f64(rp.coeff_norm(&lhs)),
            e3116 / (40.0 * r7.powi(l as i32 - 1)),
        ));
        let rhs = &(&z * &(&(&eh(-1.0)? * &pc(0, l + 1)) + &(&eh(lf + 1.0)? * &qc(l + 1, 0))))
            + &(&(&eh(1.0)? * &qc(0, l - 1)) + &(&eh(lf - 1.0)? * &pc(l - 1, 0)));
        checks.push(BoundCheck::new(
            format!("pq_j+-1[j={l}]"),
            to_f64(rp.coeff_norm(&rhs)),
            e3116 / (40.0 * r7.powi(l as i32 - 1)),
        ));
    }
    let cb = e6132 / (60.0 * r7);
    checks.push(BoundCheck::new("coeff_res_pq", to_f64(rp.coeff_norm(&core)), cb));
    let f10 = sigma.f.crown_coeff(1, 0);
    let g01 = sigma.g.crown_coeff(0, 1);
    let res_f = &(&(&eh(1.0)? * &qc(1, 0).conj()) + &(&eh(1.0)? * &pc(0, 1))) - &f10;
    checks.push(BoundCheck::new("coeff_res_f", to_f64(rp.coeff_norm(&res_f)), cb));
    let res_g = &(&(&eh(-1.0)? * &pc(0, 1).conj()) + &(&eh(-1.0)? * &qc(1, 0))) - &g01;
    checks.push(BoundCheck::new("coeff_res_g", to_f64(rp.coeff_norm(&res_g)), cb));

    // first-order approximations of f and g
    let (af, ag) = sigma_first_order(t)?;
    checks.push(BoundCheck::new("appro_f", to_f64(small.norm(&(&sigma.f - &af))?), e3116 / 80.0));
    checks.push(BoundCheck::new("appro_g", to_f64(small.norm(&(&sigma.g - &ag))?), e3116 / 80.0));
    checks.push(BoundCheck::new("cond_F", to_f64(sigma_skew), 2.0 * to_f64(skew_norm) + e3116 / 40.0));
    checks.push(BoundCheck::new("cor_fg_f", to_f64(small.norm(&sigma.f)?), e / 4.0));
    checks.push(BoundCheck::new("cor_fg_g", to_f64(small.norm(&sigma.g)?), e / 4.0));

    Ok(StructuralReport {
        eps: e,
        involution: to_f64(involution),
        tau2_involution: to_f64(tau2_involution),
        reversibility: to_f64(reversibility),
        skew: to_f64(skew_norm),
        sigma_skew: to_f64(sigma_skew),
        checks,
    })
}

/// First-order parts of `(f, g)`:
/// `(iα′/2)(e^{−iα/2}ηq̄ + e^{iα/2}ξp̄)e^{iα}ξ + e^{iα/2}q̄ + p(e^{−iα/2}η, e^{iα/2}ξ)` and
/// `−(iα′/2)(…)e^{−iα}η + e^{−iα/2}p̄ + q(e^{−iα/2}η, e^{iα/2}ξ)`.
pub fn sigma_first_order<F: Real>(t: &InvolutionPair<F>) -> Result<(CrownSeries<F>, CrownSeries<F>)> {
    let d = t.degree();
    let dz = d / 2;
    let a = t.alpha.with_dz(dz);
    let da = CrownSeries::lift(&a.derivative().scale(Complex::new(F::zero(), lit(0.5))), d);
    let e1 = half_rotation(&a, F::one(), d)?;
    let em1 = half_rotation(&a, -F::one(), d)?;
    let e2 = half_rotation(&a, lit(2.0), d)?;
    let em2 = half_rotation(&a, lit(-2.0), d)?;
    let pb = t.p.conjugate();
    let qb = t.q.conjugate();
    let bracket = &(&em1 * &qb.mul_eta()) + &(&e1 * &pb.mul_xi());
    let c = &da * &bracket;
    let p_sw = compose_swapped(&t.p, &a, F::one())?;
    let q_sw = compose_swapped(&t.q, &a, F::one())?;
    let f1 = &(&(&c * &e2.mul_xi()) + &(&e1 * &qb)) + &p_sw;
    let g1 = &(&(&em1 * &pb) - &(&c * &em2.mul_eta())) + &q_sw;
    Ok((f1, g1))
}

/// `ρ`-compatibility of a transform: every series has real coefficients within `tol`.
pub fn is_real_map<F: Real>(m: &SeriesMap<F>, tol: F) -> bool {
    m.max_imag() <= tol * F::one().max(m.max_abs())
}
