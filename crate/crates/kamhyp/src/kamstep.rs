//! One iteration step for an involution pair: truncation, approximate
//! cohomological equations, conjugation by `Id + Û` and the
//! product-preserving `Θ`-scaling, with every estimate measured against its
//! analytic bound.

use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result, StageExt};
use crate::involution::{
    compose_sigma, compose_swapped, half_rotation, skew_operator_L, skew_term, BoundCheck, InvolutionPair,
    ReversibleMap, DEFAULT_REALNESS_TOL, DEFAULT_STRUCTURAL_TOL,
};
use crate::moserwebster::PointTransform;
use crate::series::{
    invert_near_identity, CoeffSeries, CrownDomain, CrownSeries, InverseGate, InverseOptions, SeriesMap,
    DEFAULT_BOUNDARY_SAMPLES,
};

/// Number of circle samples used when checking divisors on parameter disks.
pub const DIVISOR_DISK_SAMPLES: usize = 16;
/// Fraction of the smallest occurring divisor used as `δ` in practical mode.
pub const PRACTICAL_DELTA_FACTOR: f64 = 0.9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Practical,
    Rigorous,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Practical => "practical",
            Mode::Rigorous => "rigorous",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "practical" => Ok(Mode::Practical),
            "rigorous" => Ok(Mode::Rigorous),
            other => Err(format!("unknown mode `{other}` (expected practical or rigorous)")),
        }
    }
}

/// Radii, crown widths, truncation index and divisor threshold of one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepGeometry {
    pub mode: Mode,
    pub eps: f64,
    pub s: usize,
    pub r: f64,
    pub r_plus: f64,
    pub beta: f64,
    pub beta_plus: f64,
    pub beta_tilde: f64,
    pub k: f64,
    pub delta: f64,
    pub boundary_samples: usize,
}

/// Relative margin so that the measured perturbation sits strictly below `ε/10`.
pub const EPS_MARGIN: f64 = 1.0 + 1e-9;

/// `ε` for a step on `domain`: the measured `10·max(‖p‖, ‖q‖)` with [`EPS_MARGIN`].
pub fn step_eps(t: &InvolutionPair<f64>, domain: &CrownDomain<f64>) -> Result<f64> {
    Ok(t.measured_eps(domain)? * EPS_MARGIN)
}

/// `K = |ln ε| / |ln(r⁽⁷⁾/r)|`.
pub fn k_of(eps: f64, r: f64, r_plus: f64) -> f64 {
    let r7 = r_plus + 7.0 / 8.0 * (r - r_plus);
    eps.ln().abs() / (r7 / r).ln().abs()
}

impl StepGeometry {
    /// Desk-scale geometry: `β̃ = 16β^{5/4}` when it fits strictly between `β₊` and `β`,
    /// otherwise their midpoint; `δ` is a fixed fraction of the smallest divisor that
    /// actually occurs on the parameter grid.
    #[allow(clippy::too_many_arguments)]
    pub fn practical(
        eps: f64,
        s: usize,
        r: f64,
        r_plus: f64,
        beta: f64,
        alpha: &CoeffSeries<f64>,
        omegas: &[f64],
        degree: usize,
    ) -> Result<Self> {
        let beta_plus = beta.powf(1.25);
        let bt = 16.0 * beta_plus;
        let beta_tilde = if beta_plus < bt && bt < beta { bt } else { 0.5 * (beta + beta_plus) };
        let k = k_of(eps, r, r_plus);
        let mut g = Self {
            mode: Mode::Practical,
            eps,
            s,
            r,
            r_plus,
            beta,
            beta_plus,
            beta_tilde,
            k,
            delta: 1.0,
            boundary_samples: DEFAULT_BOUNDARY_SAMPLES,
        };
        if omegas.is_empty() {
            return Err(KamError::EmptyParameterSet);
        }
        let (min, n, _) = min_divisor(alpha, omegas, g.k_index(degree) + 1);
        if !(min > 0.0) {
            return Err(KamError::SmallDivisor { n, value: min, threshold: 0.0 });
        }
        g.delta = PRACTICAL_DELTA_FACTOR * min;
        g.validate()?;
        Ok(g)
    }

    /// Geometry with `β = ε^{1/(40s)}` and `δ` the geometric midpoint of `(80ε^{1/(60s)}, 1)`.
    pub fn rigorous(eps: f64, s: usize, r: f64, r_plus: f64) -> Result<Self> {
        let sf = s as f64;
        let beta = eps.powf(1.0 / (40.0 * sf));
        let beta_plus = beta.powf(1.25);
        let lo = 80.0 * eps.powf(1.0 / (60.0 * sf));
        if !(lo < 1.0) {
            return Err(KamError::Structural(format!(
                "divisor threshold interval ({lo:e}, 1) is empty at eps = {eps:e}"
            )));
        }
        let g = Self {
            mode: Mode::Rigorous,
            eps,
            s,
            r,
            r_plus,
            beta,
            beta_plus,
            beta_tilde: 16.0 * beta_plus,
            k: k_of(eps, r, r_plus),
            delta: lo.sqrt(),
            boundary_samples: DEFAULT_BOUNDARY_SAMPLES,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_plus > 0.0 && self.r_plus < self.r) {
            return Err(KamError::Structural(format!("need 0 < r_plus < r, got {} and {}", self.r_plus, self.r)));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(KamError::Structural(format!("eps = {:e} outside (0, 1)", self.eps)));
        }
        if !(self.beta > 0.0 && self.beta_plus > 0.0 && self.beta_tilde > 0.0) {
            return Err(KamError::Structural("crown widths must be positive".into()));
        }
        if !(self.beta_plus < self.beta_tilde && self.beta_tilde < self.beta) {
            return Err(KamError::Structural(format!(
                "ordering beta_plus < beta_tilde < beta violated: {:e}, {:e}, {:e}",
                self.beta_plus, self.beta_tilde, self.beta
            )));
        }
        if !(self.k >= 1.0) {
            return Err(KamError::Structural(format!("K = {} below 1", self.k)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0 || self.mode == Mode::Practical && self.delta > 0.0) {
            return Err(KamError::Structural(format!("delta = {:e} outside (0, 1)", self.delta)));
        }
        if self.mode == Mode::Rigorous {
            let lo = 80.0 * self.eps.powf(1.0 / (60.0 * self.s as f64));
            if !(self.delta > lo) {
                return Err(KamError::Structural(format!("delta = {:e} not above {lo:e}", self.delta)));
            }
        }
        Ok(())
    }

    /// `r⁽ᵐ⁾ = r₊ + (m/8)(r − r₊)`.
    pub fn r_m(&self, m: usize) -> f64 {
        self.r_plus + m as f64 / 8.0 * (self.r - self.r_plus)
    }

    pub fn r7(&self) -> f64 {
        self.r_m(7)
    }

    pub fn r_tilde(&self) -> f64 {
        self.r_m(4)
    }

    /// `⌊K⌋`, capped by the truncation degree.
    pub fn k_index(&self, degree: usize) -> usize {
        (self.k.floor().max(0.0) as usize).min(degree)
    }

    /// The inequality on `ε` assumed by the step, as `(lhs, 1)`.
    pub fn smallness(&self) -> BoundCheck {
        let sf = self.s as f64;
        let q = (7.0 / 8.0 + self.r_plus / (8.0 * self.r)).ln().abs();
        let lhs = (self.eps.ln().abs() / q + 2.0) * (16.0 * sf + 1.0).powf(16.0 * sf)
            * self.eps.powf(1.0 / (2400.0 * sf * sf))
            / ((self.r - self.r_plus) * self.r_plus);
        BoundCheck::new("varepsilon_small", lhs, 1.0)
    }

    /// Norm domain `(O ∩ ]−r²+β, r²−β[, β, r)`.
    pub fn domain(&self, omegas: &[f64], beta: f64, radius: f64) -> Result<CrownDomain<f64>> {
        crown_domain(omegas, beta, radius, self.boundary_samples)
    }
}

/// Parameters of `omegas` for which the crown `(β, r)` is nonempty, as a norm domain.
pub fn crown_domain(omegas: &[f64], beta: f64, radius: f64, samples: usize) -> Result<CrownDomain<f64>> {
    let limit = radius * radius - beta;
    let kept: Vec<f64> = omegas.iter().copied().filter(|w| w.abs() < limit).collect();
    if kept.is_empty() {
        return Err(KamError::EmptyParameterSet);
    }
    Ok(CrownDomain::new(kept, beta, radius).with_samples(samples))
}

/// Smallest `|e^{inα(ω)} − 1|` over the grid and `1 ≤ n ≤ nmax`, with the minimizing `(n, ω)`.
pub fn min_divisor(alpha: &CoeffSeries<f64>, omegas: &[f64], nmax: usize) -> (f64, i64, f64) {
    let mut best = (f64::INFINITY, 0, f64::NAN);
    for &w in omegas {
        let a = alpha.eval_re(w);
        for n in 1..=nmax {
            let d = 2.0 * (0.5 * n as f64 * a).sin().abs();
            if d < best.0 {
                best = (d, n as i64, w);
            }
        }
    }
    best
}

/// Parameters whose divisors `|e^{inα(ω)} − 1|`, `0 < |n| ≤ nmax`, all reach `δ`.
pub fn divisor_filter(alpha: &CoeffSeries<f64>, omegas: &[f64], nmax: usize, delta: f64) -> Vec<f64> {
    omegas.iter().copied().filter(|w| min_divisor(alpha, &[*w], nmax).0 >= delta).collect()
}

/// Smallest `|e^{inα(z)} − 1|`, `0 < |n| ≤ nmax`, over the centers and boundary circles
/// `|z − ω| = radius`; errors below `threshold`.
pub fn check_divisors_on_disks(
    alpha: &CoeffSeries<f64>,
    omegas: &[f64],
    radius: f64,
    nmax: usize,
    threshold: f64,
) -> Result<f64> {
    let mut min = f64::INFINITY;
    for &w in omegas {
        let pts = std::iter::once(C::new(w, 0.0)).chain((0..DIVISOR_DISK_SAMPLES).map(|k| {
            let th = std::f64::consts::TAU * k as f64 / DIVISOR_DISK_SAMPLES as f64;
            C::new(w, 0.0) + C::from_polar(radius, th)
        }));
        for z in pts {
            let a = alpha.eval(z);
            for n in 1..=nmax as i64 {
                for sn in [n, -n] {
                    let d = ((C::i() * a * sn as f64).exp() - 1.0).norm();
                    if d < threshold {
                        return Err(KamError::SmallDivisor { n: sn, value: d, threshold });
                    }
                    min = min.min(d);
                }
            }
        }
    }
    Ok(min)
}

/// `p_K, q_K` with the tail norms `‖p − p_K‖`, `‖q − q_K‖`.
#[derive(Clone, Debug, PartialEq)]
pub struct Truncation {
    pub p_k: CrownSeries<f64>,
    pub q_k: CrownSeries<f64>,
    pub k_index: usize,
    pub tail_p: f64,
    pub tail_q: f64,
}

impl Truncation {
    pub fn tail(&self) -> f64 {
        self.tail_p.max(self.tail_q)
    }
}

/// Keeps the crown indices `l, j ≤ ⌊K⌋`; tails measured on `tail_domain`.
pub fn truncate_k(
    p: &CrownSeries<f64>,
    q: &CrownSeries<f64>,
    k: f64,
    tail_domain: &CrownDomain<f64>,
) -> Result<Truncation> {
    if !(k >= 1.0) {
        return Err(KamError::Structural(format!("truncation index K = {k} below 1")));
    }
    let k_index = (k.floor() as usize).min(p.degree());
    let p_k = p.crown_band(k_index);
    let q_k = q.crown_band(k_index);
    let tail_p = tail_domain.norm(&(p - &p_k))?;
    let tail_q = tail_domain.norm(&(q - &q_k))?;
    Ok(Truncation { p_k, q_k, k_index, tail_p, tail_q })
}

/// Coefficients `û, v̂` of the approximate cohomological equations, read off the crown
/// coefficients of `σ`'s perturbation `(f, g)`.
pub fn solve_cohomological(
    t: &InvolutionPair<f64>,
    sigma: &ReversibleMap<f64>,
    geom: &StepGeometry,
    omegas: &[f64],
) -> Result<(CrownSeries<f64>, CrownSeries<f64>)> {
    if sigma.is_stale_for(t) {
        return Err(KamError::Structural("sigma was computed from a different pair".into()));
    }
    let d = t.degree();
    let kk = geom.k_index(d);
    let alpha = t.alpha.with_dz(d / 2);
    check_divisors_on_disks(&alpha, omegas, geom.beta_tilde, kk + 1, 0.5 * geom.delta)?;
    let cis = |k: f64| alpha.cis_series(k);
    let e1 = cis(1.0)?;
    let em1 = cis(-1.0)?;
    let half = C::new(0.5, 0.0);
    let mut u = CrownSeries::zeros(d);
    let mut v = CrownSeries::zeros(d);

    for l in 2..=kk {
        let f = sigma.f.crown_coeff(l, 0);
        let num = &f - &(&cis((l + 1) as f64)? * &f.conj());
        let den = &cis(l as f64)? - &e1;
        u.add_crown_term(l, 0, &num.div(&den)?.scale(half));
    }
    for j in 0..=kk {
        let f = sigma.f.crown_coeff(0, j);
        let num = &f - &(&cis(-(j as f64 - 1.0))? * &f.conj());
        let den = &cis(-(j as f64))? - &e1;
        u.add_crown_term(0, j, &num.div(&den)?.scale(half));
    }
    for l in 0..=kk {
        let g = sigma.g.crown_coeff(l, 0);
        let num = &g - &(&cis(l as f64 - 1.0)? * &g.conj());
        let den = &cis(l as f64)? - &em1;
        v.add_crown_term(l, 0, &num.div(&den)?.scale(half));
    }
    for j in 2..=kk {
        let g = sigma.g.crown_coeff(0, j);
        let num = &g - &(&cis(-((j + 1) as f64))? * &g.conj());
        let den = &cis(-(j as f64))? - &em1;
        v.add_crown_term(0, j, &num.div(&den)?.scale(half));
    }
    let u = u.project_real(DEFAULT_REALNESS_TOL, "u_hat")?;
    let v = v.project_real(DEFAULT_REALNESS_TOL, "v_hat")?;
    Ok((u, v))
}

/// Residuals of the two cohomological equations and the skew of `(û, v̂)`, against their
/// bounds at `(β̃, r⁽⁷⁾)`.
pub fn cohomological_checks(
    t: &InvolutionPair<f64>,
    trunc: &Truncation,
    u: &CrownSeries<f64>,
    v: &CrownSeries<f64>,
    geom: &StepGeometry,
    omegas: &[f64],
    skew_norm: f64,
) -> Result<Vec<BoundCheck>> {
    let d = t.degree();
    let dom = geom.domain(omegas, geom.beta_tilde, geom.r7())?;
    let e = half_rotation(&t.alpha, 1.0, d)?;
    let ei = half_rotation(&t.alpha, -1.0, d)?;
    let p01 = CrownSeries::lift(&trunc.p_k.crown_coeff(0, 1), d).mul_eta();
    let q10 = CrownSeries::lift(&trunc.q_k.crown_coeff(1, 0), d).mul_xi();
    let r1 = &(&(&(&e * v) - &compose_swapped(u, &t.alpha, -1.0)?) + &trunc.p_k) - &p01;
    let r2 = &(&(&(&ei * u) - &compose_swapped(v, &t.alpha, -1.0)?) + &trunc.q_k) - &q10;
    let luv = &u.mul_eta() + &v.mul_xi();
    let eps = geom.eps;
    let kp1 = geom.k + 1.0;
    let e61 = eps.powf(61.0 / 32.0);
    let e49 = eps.powf(49.0 / 50.0);
    Ok(vec![
        BoundCheck::new("cohomo1", dom.norm(&r1)?, e61 / 80.0 + 6.0 * kp1 / geom.delta * skew_norm),
        BoundCheck::new("cohomo2", dom.norm(&r2)?, e61 / 80.0 + 6.0 * kp1 / geom.delta * skew_norm),
        BoundCheck::new("esti_Luv", dom.norm(&luv)?, e61 / 16.0 + 5.0 * kp1 / geom.delta * skew_norm),
        BoundCheck::new("esti_uv_u", dom.norm(u)?, e49 / 20.0),
        BoundCheck::new("esti_uv_v", dom.norm(v)?, e49 / 20.0),
    ])
}

/// `τ̃₁ = φ⁻¹∘τ₁∘φ` for `φ = Id + Û`, split as `((e^{iα/2}+A)η + p̃, (e^{iα/2}+A)⁻¹ξ + q̃)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conjugated {
    pub alpha: CoeffSeries<f64>,
    pub s_order: usize,
    pub tau: SeriesMap<f64>,
    /// `A`, the deviation of the `(0,1)` crown coefficient from `e^{iα/2}`.
    pub a: CoeffSeries<f64>,
    pub p: CrownSeries<f64>,
    pub q: CrownSeries<f64>,
    pub phi: SeriesMap<f64>,
    pub checks: Vec<BoundCheck>,
}

/// Largest ratio `max(|x|/r, |y|/r, |xy − ω|/β)` over sampled points of the crowns
/// `C^{r_in}_{ω,β_in}` mapped by `map`; the image lies in `C^{r}_{ω,β}` when it is below 1.
pub fn crown_containment(
    map: &dyn PointTransform,
    omegas: &[f64],
    inner: (f64, f64),
    outer: (f64, f64),
    angles: usize,
) -> Result<f64> {
    let (b_in, r_in) = inner;
    let (b_out, r_out) = outer;
    let shrink = 1.0 - 1e-12;
    let mut worst: f64 = 0.0;
    for &w in omegas {
        for a in 0..angles {
            let th = std::f64::consts::TAU * a as f64 / angles as f64;
            let z = C::new(w, 0.0) + C::from_polar(b_in, th);
            let mz = z.norm();
            let moduli = [mz / r_in / shrink, mz.sqrt(), r_in * shrink];
            for rho in moduli {
                for b in 0..angles {
                    let phase = std::f64::consts::TAU * (b as f64 + 0.5) / angles as f64;
                    let xi = C::from_polar(rho.max(1e-300), phase);
                    let eta = z / xi;
                    let (x, y) = map.apply(xi, eta)?;
                    let ratio = (x.norm() / r_out).max(y.norm() / r_out).max((x * y - w).norm() / b_out);
                    worst = worst.max(ratio);
                }
            }
        }
    }
    Ok(worst)
}

/// Coefficients of `h` that a `(0,1)` crown coefficient can carry at degree `d`.
pub(crate) fn clip_odd(h: &CoeffSeries<f64>, d: usize) -> CoeffSeries<f64> {
    let mut out = h.clone();
    for k in 0..=h.dz() {
        if 2 * k + 1 > d {
            out.set(k, C::new(0.0, 0.0));
        }
    }
    out
}

/// Conjugates `τ₁` by `Id + Û` and splits off the new principal coefficient.
pub fn conjugate_step(
    t: &InvolutionPair<f64>,
    uv: (&CrownSeries<f64>, &CrownSeries<f64>),
    geom: &StepGeometry,
    omegas: &[f64],
    skew_norm: f64,
) -> Result<Conjugated> {
    let d = t.degree();
    let u_map = SeriesMap::new(uv.0.clone(), uv.1.clone());
    let gate = match geom.mode {
        Mode::Rigorous => Some(InverseGate {
            domain: geom.domain(omegas, geom.beta_tilde, geom.r7())?,
            r_inner: geom.r_tilde(),
        }),
        Mode::Practical => None,
    };
    let inv = invert_near_identity(&u_map, &InverseOptions::default(), gate.as_ref())?.plus_identity();
    let phi = u_map.plus_identity();
    let tau = inv.compose(&t.tau1()?.compose(&phi));

    let alpha = t.alpha.with_dz(d / 2);
    let e = alpha.cis_series(0.5)?;
    let a = clip_odd(&(&tau.x.crown_coeff(0, 1) - &e), d);
    let principal = &e + &a;
    let p = &tau.x - &CrownSeries::lift(&principal, d).mul_eta();
    let q = &tau.y - &CrownSeries::lift(&principal.recip()?, d).mul_xi();

    let escape = crown_containment(&phi, omegas, (geom.beta_plus, geom.r_plus), (geom.beta, geom.r), 8)?;
    if !(escape < 1.0) {
        return Err(KamError::CrownEscape(format!("Id + U_hat image ratio {escape:.6}")));
    }

    let dom = geom.domain(omegas, (2.0 * geom.beta_plus).min(geom.beta_tilde), geom.r_tilde())?;
    let e61 = geom.eps.powf(61.0 / 32.0);
    let bound = e61 / 3.0 + 22.0 * (geom.k + 1.0) / geom.delta * skew_norm;
    let lpq = skew_operator_L(&alpha.scale_real(0.5), &p, &q)?;
    let checks = vec![
        BoundCheck::new("esti_pq_plus_p", dom.norm(&p)?, bound),
        BoundCheck::new("esti_pq_plus_q", dom.norm(&q)?, bound),
        BoundCheck::new("esti_Lpq_plus", dom.norm(&lpq)?, e61 / 2.0),
        BoundCheck::new("tran_crown_phi", escape, 1.0),
    ];
    Ok(Conjugated { alpha, s_order: t.s_order, tau, a, p, q, phi, checks })
}

/// Result of the `Θ`-scaling: the new pair, the map `(Θξ, Θ⁻¹η)` and `Θ` itself.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaled {
    pub pair: InvolutionPair<f64>,
    pub scaling: SeriesMap<f64>,
    pub theta: CoeffSeries<f64>,
    pub checks: Vec<BoundCheck>,
}

/// `sup_ω |h|_{ω,β}` for a function of `z = ξη` alone.
pub fn coeff_norm(h: &CoeffSeries<f64>, omegas: &[f64], beta: f64, samples: usize) -> f64 {
    omegas.iter().fold(0.0, |m: f64, w| m.max(h.sup_on_circle(*w, beta, samples)))
}

/// `(ξ, η) ↦ (h(ξη)ξ, h(ξη)⁻¹η)`.
pub fn product_scaling(h: &CoeffSeries<f64>, degree: usize) -> Result<SeriesMap<f64>> {
    Ok(SeriesMap::new(
        CrownSeries::lift(h, degree).mul_xi(),
        CrownSeries::lift(&h.recip()?, degree).mul_eta(),
    ))
}

/// Fourth root `((e^{iα/2}+A)(e^{−iα/2}+Ā))^{1/4}` on the principal branch.
pub fn theta_root(alpha: &CoeffSeries<f64>, a: &CoeffSeries<f64>) -> Result<CoeffSeries<f64>> {
    let e = alpha.cis_series(0.5)?;
    let ei = alpha.cis_series(-0.5)?;
    let w = &(&e + a) * &(&ei + &a.conj());
    let w0 = w.coeff(0);
    if !(w0.re > 0.0) || w0.im.abs() > 0.5 * w0.re {
        return Err(KamError::BranchCut(format!("radicand constant term {w0}")));
    }
    w.powf(0.25)?.project_real(DEFAULT_REALNESS_TOL, "theta")
}

/// Product-preserving scaling `S = (Θξ, Θ⁻¹η)` turning the principal coefficient back
/// into `e^{iα₊/2}` with `α₊ − α = −i(e^{−iα/2}A − e^{iα/2}Ā)`.
pub fn theta_scaling(c: &Conjugated, geom: &StepGeometry, omegas: &[f64]) -> Result<Scaled> {
    let d = c.tau.degree();
    let theta = theta_root(&c.alpha, &c.a)?;
    let theta_inv = theta.recip()?;
    let s = product_scaling(&theta, d)?;
    let s_inv = product_scaling(&theta_inv, d)?;
    let tau_plus = s_inv.compose(&c.tau.compose(&s));

    let e = c.alpha.cis_series(0.5)?;
    let ei = c.alpha.cis_series(-0.5)?;
    let corr = &(&ei * &c.a) - &(&e * &c.a.conj());
    let alpha_plus = (&c.alpha + &corr.scale(C::new(0.0, -1.0))).project_real(DEFAULT_REALNESS_TOL, "alpha_plus")?;
    let pair = InvolutionPair::from_map(alpha_plus, &tau_plus, c.s_order)?;

    let ns = geom.boundary_samples;
    let a_norm = coeff_norm(&c.a, omegas, geom.beta_plus, ns);
    let one = CoeffSeries::one(theta.dz());
    let mut checks = vec![BoundCheck::new("Lambda_precondition", a_norm, 1.0 / 16.0)];
    let powers = [(1, theta.clone()), (-1, theta_inv.clone()), (2, &theta * &theta), (-2, &theta_inv * &theta_inv)];
    for (k, th) in powers {
        let m = coeff_norm(&(&th - &one), omegas, geom.beta_plus, ns);
        checks.push(BoundCheck::new(format!("Lambda_k[k={k}]"), m, 0.75 * (k as f64).abs() * a_norm));
    }
    let dom_in = geom.domain(omegas, (2.0 * geom.beta_plus).min(geom.beta_tilde), geom.r_tilde())?;
    let dom_out = geom.domain(omegas, geom.beta_plus, geom.r_plus)?;
    let (pn, qn) = (dom_in.norm(&c.p)?, dom_in.norm(&c.q)?);
    let skew_in = dom_in.norm(&skew_operator_L(&c.alpha.scale_real(0.5), &c.p, &c.q)?)?;
    let (pp, qp) = (dom_out.norm(&pair.p)?, dom_out.norm(&pair.q)?);
    let skew_out = dom_out.norm(&skew_term(&pair)?)?;
    let a2 = a_norm * a_norm;
    checks.push(BoundCheck::new("theta_p_plus", pp, (1.0 + 0.75 * a_norm) * pn + a2));
    checks.push(BoundCheck::new("theta_q_plus", qp, (1.0 + 0.75 * a_norm) * qn + a2));
    checks.push(BoundCheck::new("crossing_theta_plus", skew_out, skew_in + a_norm * (pn + qn) + a2));
    Ok(Scaled { pair, scaling: s, theta, checks })
}

/// Measurements of one step, each paired with its bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub mode: Mode,
    pub eps: f64,
    pub k: f64,
    pub k_index: usize,
    pub delta: f64,
    pub r: f64,
    pub r_plus: f64,
    pub beta: f64,
    pub beta_plus: f64,
    pub beta_tilde: f64,
    pub omegas_in: usize,
    pub omegas_kept: usize,
    pub min_divisor: f64,
    pub p_norm: f64,
    pub q_norm: f64,
    pub skew_norm: f64,
    pub u_hat_norm: f64,
    pub v_hat_norm: f64,
    pub tail_norm: f64,
    pub p_plus_norm: f64,
    pub q_plus_norm: f64,
    pub skew_plus_norm: f64,
    pub psi_norm: f64,
    /// `‖(α₊ − α)^{(k)}‖` for `k = 0..=16s`.
    pub alpha_diff: Vec<f64>,
    /// Bounds with their constants as stated, including both constants (24 and 18)
    /// found for the new perturbation.
    pub checks: Vec<BoundCheck>,
    /// Exponent-only predicates used for pass/fail at desk scale; derivative bounds here
    /// carry the Cauchy factor `k!/(r₊²)^k`.
    pub practical: Vec<BoundCheck>,
}

impl StepReport {
    pub fn verbatim_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn practical_pass(&self) -> bool {
        self.practical.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&BoundCheck> {
        self.checks.iter().chain(self.practical.iter()).find(|c| c.name == name)
    }

    /// Measured `ε₊ = 10·max(‖p₊‖, ‖q₊‖)`.
    pub fn eps_plus(&self) -> f64 {
        10.0 * self.p_plus_norm.max(self.q_plus_norm)
    }

    pub fn csv_header() -> Vec<&'static str> {
        vec![
            "nu",
            "mode",
            "eps_measured",
            "skew_measured",
            "eps_plus",
            "skew_plus",
            "p_plus_bound",
            "skew_plus_bound",
            "delta",
            "k",
            "verbatim_pass",
            "practical_pass",
        ]
    }

    pub fn csv_record(&self, nu: usize) -> Vec<String> {
        let bound = |n: &str| self.check(n).map(|c| c.bound).unwrap_or(f64::NAN);
        vec![
            nu.to_string(),
            self.mode.name().to_string(),
            format!("{:e}", self.eps),
            format!("{:e}", self.skew_norm),
            format!("{:e}", self.eps_plus()),
            format!("{:e}", self.skew_plus_norm),
            format!("{:e}", bound("esti_p_plus_q_plus_p")),
            format!("{:e}", bound("esti_Lp_plus_q_plus")),
            format!("{:e}", self.delta),
            format!("{}", self.k),
            self.verbatim_pass().to_string(),
            self.practical_pass().to_string(),
        ]
    }
}

/// Output of [`main_step`].
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub pair: InvolutionPair<f64>,
    /// `ψ = (Id + Û)∘S`.
    pub psi: SeriesMap<f64>,
    pub theta: CoeffSeries<f64>,
    /// Parameters kept by the divisor condition.
    pub omegas: Vec<f64>,
    pub report: StepReport,
}

/// Exponents of the desk-scale predicates `‖p₊‖+‖q₊‖ ≤ ε^{1.15}` and `skew₊ ≤ ε^{1.4}`.
pub const PRACTICAL_PQ_EXPONENT: f64 = 1.15;
pub const PRACTICAL_SKEW_EXPONENT: f64 = 1.4;

/// One full step `τ₁ ↦ ψ⁻¹∘τ₁∘ψ`.
pub fn main_step(t: &InvolutionPair<f64>, geom: &StepGeometry, omegas: &[f64]) -> Result<StepOutcome> {
    geom.validate().stage("geometry")?;
    let d = t.degree();
    let kk = geom.k_index(d);
    let eps = geom.eps;
    let ns = geom.boundary_samples;

    let dom = geom.domain(omegas, geom.beta, geom.r).stage("geometry")?;
    let p_norm = dom.norm(&t.p)?;
    let q_norm = dom.norm(&t.q)?;
    let skew_norm = dom.norm(&skew_term(t)?)?;

    let (min_div, _, _) = min_divisor(&t.alpha, &dom.omegas, kk + 1);
    let kept = divisor_filter(&t.alpha, &dom.omegas, kk + 1, geom.delta);
    if kept.is_empty() {
        return Err(KamError::EmptyParameterSet.in_stage("divisor_filter"));
    }
    let out_dom = geom.domain(&kept, geom.beta_plus, geom.r_plus).stage("geometry")?;
    let kept = out_dom.omegas.clone();

    let trunc_dom = geom.domain(&kept, geom.beta_tilde, geom.r7()).stage("truncate_K")?;
    let trunc = truncate_k(&t.p, &t.q, geom.k, &trunc_dom).stage("truncate_K")?;
    let sigma = compose_sigma(t).stage("compose_sigma")?;
    let (u, v) = solve_cohomological(t, &sigma, geom, &kept).stage("solve_cohomological")?;
    let mut checks = vec![
        geom.smallness(),
        BoundCheck::new("esti_pq_p", p_norm, eps / 10.0),
        BoundCheck::new("esti_pq_q", q_norm, eps / 10.0),
        BoundCheck::new("rest_pq", trunc.tail(), eps * eps / 10.0),
    ];
    checks.extend(cohomological_checks(t, &trunc, &u, &v, geom, &kept, skew_norm).stage("solve_cohomological")?);

    let conj = conjugate_step(t, (&u, &v), geom, &kept, skew_norm).stage("conjugate_step")?;
    checks.extend(conj.checks.iter().cloned());
    let scaled = theta_scaling(&conj, geom, &kept).stage("theta_scaling")?;
    checks.extend(scaled.checks.iter().cloned());

    let psi = conj.phi.compose(&scaled.scaling);
    let escape = crown_containment(&psi, &kept, (geom.beta_plus, geom.r_plus), (geom.beta, geom.r), 8)?;
    if !(escape < 1.0) {
        return Err(KamError::CrownEscape(format!("psi image ratio {escape:.6}")).in_stage("main_step"));
    }
    let pair = scaled.pair;
    let p_plus_norm = out_dom.norm(&pair.p)?;
    let q_plus_norm = out_dom.norm(&pair.q)?;
    let skew_plus_norm = out_dom.norm(&skew_term(&pair)?)?;
    let psi_minus = psi.minus_identity();
    let psi_norm = out_dom.norm_pair(&psi_minus.x, &psi_minus.y)?;
    let tv_dom = geom.domain(&kept, geom.beta_tilde, geom.r7())?;
    let (u_hat_norm, v_hat_norm) = (tv_dom.norm(&u)?, tv_dom.norm(&v)?);

    let mut diff = &pair.alpha - &t.alpha.with_dz(pair.alpha.dz());
    let mut alpha_diff = Vec::new();
    let mut cauchy = Vec::new();
    let rho = geom.r_plus * geom.r_plus;
    let mut factorial = 1.0;
    for k in 0..=16 * geom.s.max(1) {
        let m = coeff_norm(&diff, &kept, geom.beta_plus, ns);
        let bound = eps.powf(1.0 / 3.0) / 10.0;
        checks.push(BoundCheck::new(format!("error_alpha[k={k}]"), m, bound));
        if k > 0 {
            factorial *= k as f64;
        }
        cauchy.push(BoundCheck::new(format!("error_alpha_scaled[k={k}]"), m, bound * factorial / rho.powi(k as i32)));
        alpha_diff.push(m);
        diff = diff.derivative();
    }
    let e61 = eps.powf(61.0 / 32.0);
    for (name, c) in [("", 24.0), ("_alt18", 18.0)] {
        let bound = e61 / 2.0 + c * (geom.k + 1.0) / geom.delta * skew_norm;
        checks.push(BoundCheck::new(format!("esti_p_plus_q_plus_p{name}"), p_plus_norm, bound));
        checks.push(BoundCheck::new(format!("esti_p_plus_q_plus_q{name}"), q_plus_norm, bound));
    }
    checks.push(BoundCheck::new("esti_Lp_plus_q_plus", skew_plus_norm, e61));
    checks.push(BoundCheck::new("esti_UV", psi_norm, eps.powf(49.0 / 50.0) / 2.0));
    checks.push(BoundCheck::new("tran_crown_psi", escape, 1.0));

    let tau_plus = pair.tau1()?;
    let invol = tau_plus.compose(&tau_plus).minus_identity();
    let invol_res = out_dom.norm_pair(&invol.x, &invol.y)?;
    let mut practical = vec![
        BoundCheck::new("contraction_pq", p_plus_norm + q_plus_norm, eps.powf(PRACTICAL_PQ_EXPONENT)),
        BoundCheck::new("contraction_skew", skew_plus_norm, eps.powf(PRACTICAL_SKEW_EXPONENT)),
        BoundCheck::new("involution_plus", invol_res, DEFAULT_STRUCTURAL_TOL),
        BoundCheck::new("realness_psi", psi.max_imag(), DEFAULT_REALNESS_TOL),
    ];
    practical.extend(cauchy);

    let report = StepReport {
        mode: geom.mode,
        eps,
        k: geom.k,
        k_index: kk,
        delta: geom.delta,
        r: geom.r,
        r_plus: geom.r_plus,
        beta: geom.beta,
        beta_plus: geom.beta_plus,
        beta_tilde: geom.beta_tilde,
        omegas_in: omegas.len(),
        omegas_kept: kept.len(),
        min_divisor: min_div,
        p_norm,
        q_norm,
        skew_norm,
        u_hat_norm,
        v_hat_norm,
        tail_norm: trunc.tail(),
        p_plus_norm,
        q_plus_norm,
        skew_plus_norm,
        psi_norm,
        alpha_diff,
        checks,
        practical,
    };
    Ok(StepOutcome { pair, psi, theta: scaled.theta, omegas: kept, report })
}

/// Ordered maps `ψ₀, ψ₁, …` acting as `Ψ = ψ₀∘ψ₁∘…`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransformChain {
    pub maps: Vec<SeriesMap<f64>>,
}

impl TransformChain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, m: SeriesMap<f64>) {
        self.maps.push(m);
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    /// The composite as one truncated series map.
    pub fn compose_series(&self, degree: usize) -> SeriesMap<f64> {
        self.maps
            .iter()
            .fold(SeriesMap::identity(degree), |acc, m| acc.compose(&m.with_degree(degree)))
    }

    /// Largest imaginary coefficient across all maps.
    pub fn max_imag(&self) -> f64 {
        self.maps.iter().fold(0.0, |m: f64, s| m.max(s.max_imag()))
    }
}

impl PointTransform for TransformChain {
    fn apply(&self, xi: C, eta: C) -> Result<(C, C)> {
        Ok(self.maps.iter().rev().fold((xi, eta), |(x, y), m| m.eval(x, y)))
    }
}
