//! Preparation of an involution pair before the iteration: finite-order
//! Poincaré–Dulac normalization, the product-preserving real-form scaling,
//! nondegeneracy detection and the choice of the starting radius.

use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::involution::{skew_term, BoundCheck, InvolutionPair, DEFAULT_REALNESS_TOL};
use crate::kamstep::{
    clip_odd, crown_domain, main_step, product_scaling, theta_root, Mode, StepGeometry, TransformChain, EPS_MARGIN,
};
use crate::series::{invert_near_identity, CoeffSeries, CrownSeries, InverseOptions, SeriesMap, DEFAULT_BOUNDARY_SAMPLES};

pub const DEFAULT_DIVISOR_FLOOR: f64 = 1e-8;
pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-12;
pub const DEFAULT_START_RADIUS: f64 = 0.25;
pub const DEFAULT_MIN_RADIUS: f64 = 1e-6;
pub const DEFAULT_SEARCH_OMEGAS: usize = 9;

/// `N = 16s`.
pub fn default_order(s: usize) -> usize {
    16 * s.max(1)
}

/// Largest `N ≤ n` with `2N + 1 ≤ degree`.
pub fn effective_order(n: usize, degree: usize) -> usize {
    n.min(degree.saturating_sub(1) / 2)
}

/// `ξ^m η^n` in the first component is resonant iff `n = m + 1`.
pub fn is_resonant_x(m: usize, n: usize) -> bool {
    n == m + 1
}

/// `ξ^m η^n` in the second component is resonant iff `m = n + 1`.
pub fn is_resonant_y(m: usize, n: usize) -> bool {
    m == n + 1
}

/// Bookkeeping for one homogeneous degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeStage {
    pub degree: usize,
    pub eliminated: usize,
    pub resonant_kept: usize,
    pub min_divisor: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoincareDulac {
    pub pair: InvolutionPair<f64>,
    /// `Φ₂, Φ₃, …` with `Ψ = Φ₂∘Φ₃∘…` and output `Ψ⁻¹∘τ₁∘Ψ`.
    pub chain: TransformChain,
    pub stages: Vec<DegreeStage>,
    pub n_eff: usize,
}

/// Removes every non-resonant monomial of degree `≤ 2N + 1` by real polynomial conjugations.
pub fn poincare_dulac(t: &InvolutionPair<f64>, n: usize, divisor_floor: f64) -> Result<PoincareDulac> {
    let d = t.degree();
    let n_eff = effective_order(n, d);
    let lam = t.lambda();
    let a = C::from_polar(1.0, 0.5 * lam);
    let lin_x = CrownSeries::monomial(0, 1, a, d);
    let mut tau = t.tau1()?;
    let mut chain = TransformChain::new();
    let mut stages = Vec::new();
    let opts = InverseOptions::default();

    for k in 2..=2 * n_eff + 1 {
        let p = &tau.x - &lin_x;
        let mut u = CrownSeries::zeros(d);
        let mut v = CrownSeries::zeros(d);
        let mut stage = DegreeStage { degree: k, eliminated: 0, resonant_kept: 0, min_divisor: f64::INFINITY };
        for m in 0..=k {
            let nn = k - m;
            let c = p.get(m, nn);
            if is_resonant_x(m, nn) {
                if c.norm() > 0.0 {
                    stage.resonant_kept += 1;
                }
                continue;
            }
            // a·v_{mn} − a^{n−m}·u_{nm} = −c with real unknowns
            let b = a.powi(nn as i32 - m as i32);
            let det = b.re * a.im - a.re * b.im;
            let divisor = 2.0 * det.abs();
            stage.min_divisor = stage.min_divisor.min(divisor);
            if c.norm() == 0.0 {
                continue;
            }
            if !(divisor >= divisor_floor) {
                return Err(KamError::SmallDivisor { n: m as i64 - nn as i64 + 1, value: divisor, threshold: divisor_floor });
            }
            let vv = (c.re * b.im - b.re * c.im) / det;
            let uu = (a.im * c.re - a.re * c.im) / det;
            v.set(m, nn, C::new(vv, 0.0));
            u.set(nn, m, C::new(uu, 0.0));
            stage.eliminated += 1;
        }
        stages.push(stage);
        if u.is_zero() && v.is_zero() {
            continue;
        }
        let big_u = SeriesMap::new(u, v);
        let phi = big_u.plus_identity();
        let phi_inv = invert_near_identity(&big_u, &opts, None)?.plus_identity();
        tau = phi_inv.compose(&tau.compose(&phi));
        chain.push(phi);
    }
    let pair = InvolutionPair::from_map(t.alpha.clone(), &tau, t.s_order)?;
    Ok(PoincareDulac { pair, chain, stages, n_eff })
}

/// Largest non-resonant coefficient of `τ₁ − (e^{iλ/2}η, e^{−iλ/2}ξ)` up to total degree `order`.
pub fn nonresonant_residual(t: &InvolutionPair<f64>, order: usize) -> Result<f64> {
    let d = t.degree();
    let a = C::from_polar(1.0, 0.5 * t.lambda());
    let tau = t.tau1()?;
    let px = &tau.x - &CrownSeries::monomial(0, 1, a, d);
    let py = &tau.y - &CrownSeries::monomial(1, 0, a.conj(), d);
    let mut worst: f64 = 0.0;
    for (m, n, c) in px.terms() {
        if m + n <= order && !is_resonant_x(m, n) {
            worst = worst.max(c.norm());
        }
    }
    for (m, n, c) in py.terms() {
        if m + n <= order && !is_resonant_y(m, n) {
            worst = worst.max(c.norm());
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Realform {
    pub pair: InvolutionPair<f64>,
    /// `(μξ, μ⁻¹η)`.
    pub scaling: SeriesMap<f64>,
    pub mu: CoeffSeries<f64>,
    /// `C̃ = Λ − e^{iλ/2}` for the principal coefficient `Λ` before scaling.
    pub c_tilde: CoeffSeries<f64>,
    /// Imaginary part of `α̌` before projection.
    pub max_imag: f64,
}

/// Conjugates by `(μξ, μ⁻¹η)`, `μ⁴ = ΛΛ̄`, so that the principal coefficient becomes `e^{iα̌/2}` with `α̌` real.
pub fn realform_scaling(t: &InvolutionPair<f64>) -> Result<Realform> {
    let d = t.degree();
    let dz = d / 2;
    let lam = t.lambda();
    let a = C::from_polar(1.0, 0.5 * lam);
    let tau = t.tau1()?;
    let big_lambda = clip_odd(&tau.x.crown_coeff(0, 1), d);
    let mut c_tilde = big_lambda.clone();
    c_tilde.set(0, big_lambda.coeff(0) - a);
    let lam_series = CoeffSeries::constant(C::new(lam, 0.0), dz);
    let mu = theta_root(&lam_series, &c_tilde)?;
    let mu_inv = mu.recip()?;
    let s = product_scaling(&mu, d)?;
    let s_inv = product_scaling(&mu_inv, d)?;
    let tau_s = s_inv.compose(&tau.compose(&s));

    let w = big_lambda.div(&(&mu * &mu).scale(a))?;
    let raw = &lam_series + &w.ln()?.scale(C::new(0.0, -2.0));
    let max_imag = raw.max_imag();
    let alpha = raw.project_real(DEFAULT_REALNESS_TOL, "alpha_check")?;
    let pair = InvolutionPair::from_map(alpha, &tau_s, t.s_order)?;
    Ok(Realform { pair, scaling: s, mu, c_tilde, max_imag })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Nondegeneracy {
    Nondegenerate {
        s: usize,
        coefficient: f64,
        /// `t` of the radial map `(tξ, tη)` making the `z^s` coefficient of unit size.
        rescale: f64,
    },
    Degenerate,
}

impl Nondegeneracy {
    pub fn s(&self) -> Option<usize> {
        match self {
            Nondegeneracy::Nondegenerate { s, .. } => Some(*s),
            Nondegeneracy::Degenerate => None,
        }
    }
}

/// Smallest `s ≥ 1` with `|c_s| > tol` in the deviation series `Σ c_k z^k` (constant term ignored).
pub fn detect_nondegeneracy(deviation: &CoeffSeries<f64>, tol: f64) -> Nondegeneracy {
    for k in 1..=deviation.dz() {
        let c = deviation.coeff(k).norm();
        if c > tol {
            return Nondegeneracy::Nondegenerate { s: k, coefficient: c, rescale: c.powf(-0.5 / k as f64) };
        }
    }
    Nondegeneracy::Degenerate
}

/// Conjugation by `(tξ, tη)`: `α(z) ↦ α(t²z)`, `p ↦ t⁻¹p(tξ, tη)`.
pub fn apply_rescale(pair: &InvolutionPair<f64>, t: f64) -> Result<InvolutionPair<f64>> {
    let d = pair.degree();
    let lin = |c: f64| {
        SeriesMap::new(CrownSeries::monomial(1, 0, C::new(c, 0.0), d), CrownSeries::monomial(0, 1, C::new(c, 0.0), d))
    };
    let tau = lin(1.0 / t).compose(&pair.tau1()?.compose(&lin(t)));
    InvolutionPair::from_map(pair.alpha.rescale_argument(t * t), &tau, pair.s_order)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Case1,
    Case2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusOptions {
    pub mode: Mode,
    pub start: f64,
    pub min_radius: f64,
    pub omega_count: usize,
}

impl Default for RadiusOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Practical,
            start: DEFAULT_START_RADIUS,
            min_radius: DEFAULT_MIN_RADIUS,
            omega_count: DEFAULT_SEARCH_OMEGAS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusTrial {
    pub r: f64,
    pub a: f64,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusResult {
    pub mode: Mode,
    pub r_star: f64,
    pub a: f64,
    pub branch: Branch,
    pub skew: f64,
    pub skew_bound: f64,
    pub eps0: f64,
    pub r0: f64,
    pub r1: f64,
    pub beta_star: f64,
    pub trials: Vec<RadiusTrial>,
    pub checks: Vec<BoundCheck>,
}

/// `A = 10·max(|p|_r, |q|_r)` with the majorant norm.
pub fn perturbation_size(t: &InvolutionPair<f64>, r: f64) -> f64 {
    10.0 * t.p.majorant_norm(r).max(t.q.majorant_norm(r))
}

/// `β = min(A^{1/(40s)}, r²/8)`: the crown width used at desk scale.
pub fn practical_beta(a: f64, s: usize, r: f64) -> f64 {
    let b = a.powf(1.0 / (40.0 * s.max(1) as f64));
    b.min(r * r / 8.0)
}

/// Symmetric grid of `count` parameters in `]−0.9ℓ, 0.9ℓ[`, `ℓ = r² − β`.
pub fn omega_grid(r: f64, beta: f64, count: usize) -> Vec<f64> {
    let l = 0.9 * (r * r - beta);
    if count <= 1 || !(l > 0.0) {
        return vec![0.0];
    }
    (0..count).map(|j| l * (2.0 * j as f64 / (count - 1) as f64 - 1.0)).collect()
}

/// Left side of the smallness condition on `A` at radius `r`, with target 1.
pub fn smallness_a(a: f64, s: usize, r: f64) -> f64 {
    let sf = s.max(1) as f64;
    let q = (7.0f64 / 8.0 + 3.0 / 32.0).ln().abs();
    let e = a.powf(49.0 / 50.0);
    (a.ln().abs() / q + 2.0) * (16.0 * sf + 1.0).powf(16.0 * sf) * e.powf(1.0 / (2400.0 * sf * sf))
        / ((0.75 * r - 9.0 / 16.0 * r) * 9.0 / 16.0 * r)
}

fn practical_trial(t: &InvolutionPair<f64>, a: f64, r: f64, count: usize) -> Result<(f64, f64)> {
    let s = t.s_order.max(1);
    let eps = a * EPS_MARGIN;
    let r_plus = 0.75 * r;
    let beta = practical_beta(eps, s, r);
    let omegas = omega_grid(r_plus, beta.powf(1.25), count);
    let geom = StepGeometry::practical(eps, s, r, r_plus, beta, &t.alpha, &omegas, t.degree())?;
    let out = main_step(t, &geom, &omegas)?;
    let rep = &out.report;
    Ok((rep.p_plus_norm + rep.q_plus_norm, eps.powf(crate::kamstep::PRACTICAL_PQ_EXPONENT)))
}

/// Halves `r` from `opts.start` until the acceptance predicate of the selected mode holds,
/// then classifies the skew term.
pub fn radius_search(t: &InvolutionPair<f64>, opts: &RadiusOptions) -> Result<RadiusResult> {
    let s = t.s_order.max(1);
    let mut r = opts.start;
    let mut trials = Vec::new();
    let r_star = loop {
        if r < opts.min_radius {
            return Err(KamError::RadiusUnderflow(r));
        }
        let a = perturbation_size(t, r);
        let trial = if a == 0.0 {
            RadiusTrial { r, a, measured: 0.0, bound: 1.0, pass: true, note: None }
        } else {
            match opts.mode {
                Mode::Rigorous => {
                    let lhs = smallness_a(a, s, r);
                    RadiusTrial { r, a, measured: lhs, bound: 1.0, pass: lhs < 1.0, note: None }
                }
                Mode::Practical if a * EPS_MARGIN >= 1.0 => RadiusTrial {
                    r,
                    a,
                    measured: f64::INFINITY,
                    bound: 1.0,
                    pass: false,
                    note: Some("A not below 1".into()),
                },
                Mode::Practical => match practical_trial(t, a, r, opts.omega_count) {
                    Ok((m, b)) => RadiusTrial { r, a, measured: m, bound: b, pass: m <= b, note: None },
                    Err(e) => RadiusTrial {
                        r,
                        a,
                        measured: f64::INFINITY,
                        bound: f64::NAN,
                        pass: false,
                        note: Some(e.to_string()),
                    },
                },
            }
        };
        let pass = trial.pass;
        trials.push(trial);
        if pass {
            break r;
        }
        r *= 0.5;
    };

    let a = perturbation_size(t, r_star);
    let beta_star = if a > 0.0 { practical_beta(a, s, r_star) } else { r_star * r_star / 8.0 };
    let omegas = omega_grid(r_star, beta_star, opts.omega_count);
    let dom = crown_domain(&omegas, beta_star, r_star, DEFAULT_BOUNDARY_SAMPLES)?;
    let skew = dom.norm(&skew_term(t)?)?;
    let skew_bound = a.powf(1.5) / 3.0;
    let branch = if a == 0.0 || skew < skew_bound { Branch::Case1 } else { Branch::Case2 };
    let (eps0, r0, r1) = match branch {
        Branch::Case1 => (a, r_star, 0.75 * r_star),
        Branch::Case2 => (a.powf(49.0 / 50.0), 0.75 * r_star, 9.0 / 16.0 * r_star),
    };
    let lam = t.lambda();
    let dev = &t.alpha - &CoeffSeries::constant(C::new(lam, 0.0), t.alpha.dz());
    let rr = r_star * r_star;
    let checks = vec![
        BoundCheck::new("alpha_check_lambda", dev.sup_on_circle(0.0, rr, DEFAULT_BOUNDARY_SAMPLES), 0.125),
        BoundCheck::new("crossing_check", skew, skew_bound),
    ];
    Ok(RadiusResult { mode: opts.mode, r_star, a, branch, skew, skew_bound, eps0, r0, r1, beta_star, trials, checks })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationReport {
    pub mode: Mode,
    pub n_requested: usize,
    pub n_eff: usize,
    pub degree: usize,
    pub lambda: f64,
    pub stages: Vec<DegreeStage>,
    pub min_divisor: f64,
    pub nonresonant_residual: f64,
    /// `[re, im]` of `C̃_k`, `k = 0..`.
    pub resonant: Vec<[f64; 2]>,
    pub realform_max_imag: f64,
    pub nondegeneracy: Nondegeneracy,
    pub radius: Option<RadiusResult>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub pair: InvolutionPair<f64>,
    /// `Φ₂∘…∘Φ_{2N+1}∘(μξ, μ⁻¹η)`.
    pub chain: TransformChain,
    pub report: NormalizationReport,
}

/// Poincaré–Dulac to order `2N + 1`, real-form scaling and detection of `s`.
pub fn normalize(t: &InvolutionPair<f64>, n: usize, divisor_floor: f64, degeneracy_tol: f64, mode: Mode) -> Result<Prepared> {
    let pd = poincare_dulac(t, n, divisor_floor)?;
    let residual = nonresonant_residual(&pd.pair, 2 * pd.n_eff + 1)?;
    let rf = realform_scaling(&pd.pair)?;
    let lam = rf.pair.lambda();
    let dev = &rf.pair.alpha - &CoeffSeries::constant(C::new(lam, 0.0), rf.pair.alpha.dz());
    let nd = detect_nondegeneracy(&clip_odd(&dev, 2 * pd.n_eff + 1), degeneracy_tol);
    let mut pair = rf.pair;
    if let Some(s) = nd.s() {
        pair.s_order = s;
    }
    let mut chain = pd.chain;
    chain.push(rf.scaling);
    let min_divisor = pd.stages.iter().fold(f64::INFINITY, |m, s| m.min(s.min_divisor));
    let report = NormalizationReport {
        mode,
        n_requested: n,
        n_eff: pd.n_eff,
        degree: t.degree(),
        lambda: lam,
        stages: pd.stages,
        min_divisor,
        nonresonant_residual: residual,
        resonant: rf.c_tilde.coeffs().iter().map(|c| [c.re, c.im]).collect(),
        realform_max_imag: rf.max_imag,
        nondegeneracy: nd,
        radius: None,
    };
    Ok(Prepared { pair, chain, report })
}
