//! End-to-end driver: configuration, preparation, the iteration loop, curve
//! extraction on the invariant hyperbolas, a smoothness diagnostic, reports and
//! the command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use num_complex::Complex64 as C;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result, StageExt};
use crate::involution::{
    skew_term, structural_residuals, BoundCheck, InvolutionPair, ResidualParams, StructuralReport,
    DEFAULT_REALNESS_TOL, DEFAULT_STRUCTURAL_TOL,
};
use crate::kamstep::{crown_domain, main_step, step_eps, Mode, StepGeometry, StepReport, TransformChain, EPS_MARGIN};
use crate::moserwebster::{diagonalize, BishopSurface, Monomial, PointTransform};
use crate::prenormal::{
    default_order, normalize, omega_grid, radius_search, Branch, NormalizationReport, RadiusOptions,
    DEFAULT_DEGENERACY_TOL, DEFAULT_DIVISOR_FLOOR, DEFAULT_START_RADIUS,
};
use crate::series::{CoeffSeries, CrownDomain, CrownSeries, SeriesMap, DEFAULT_BOUNDARY_SAMPLES};
use crate::sieve::{
    build_schedule, excise_resonances, measure_excluded, resonance_order, resonance_sum_bound, write_sieve_csv,
    ExciseOptions, ExclusionMeasure, Feasibility, IntervalSet, Schedule, SieveRow, DEFAULT_GRID_PER_UNIT,
    DEFAULT_ROOT_TOL,
};

pub const DEFAULT_CONVERGENCE_FLOOR: f64 = 1e-13;
pub const DEFAULT_CURVE_SAMPLES: usize = 64;
pub const DEFAULT_OMEGA_COUNT: usize = 9;
pub const DEFAULT_NORM_GRID: usize = 9;
pub const DEFAULT_MAX_NU: usize = 3;
pub const DEFAULT_CONJUGACY_TOL: f64 = 1e-7;
pub const DEFAULT_EQUIVARIANCE_TOL: f64 = 1e-9;
pub const CONFIG_ENV: &str = "KAM_CONFIG";

pub const EXIT_OK: i32 = 0;
pub const EXIT_STRUCTURAL: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

const LINEAR_FIXTURE: &str = include_str!("../fixtures/linear.json");
const CUBIC_FIXTURE: &str = include_str!("../fixtures/cubic.json");

// ---------------------------------------------------------------------------
// configuration

fn default_name() -> String {
    "run".into()
}

fn default_max_nu() -> usize {
    DEFAULT_MAX_NU
}

fn default_curve_samples() -> usize {
    DEFAULT_CURVE_SAMPLES
}

/// A run description, read from JSON. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub input: InputSpec,
    /// Used when the normal form does not determine `s`.
    #[serde(default)]
    pub s_hint: Option<usize>,
    /// Poincaré–Dulac order `N`; `16s` when absent.
    #[serde(default)]
    pub order: Option<usize>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_max_nu")]
    pub max_nu: usize,
    #[serde(default)]
    pub omega: OmegaSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_curve_samples")]
    pub curve_samples: usize,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum InputSpec {
    /// `z₂ = |z₁|² + γ(z₁² + z̄₁²) + Σ c_{mn} z₁^m z̄₁^n`.
    Surface(SurfaceSpec),
    /// `τ₁ = (e^{iα/2}η + p, e^{−iα/2}ξ + q)` given directly.
    Pair(PairSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    pub gamma: f64,
    pub degree: usize,
    #[serde(default)]
    pub terms: Vec<Monomial>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub degree: usize,
    /// Real Taylor coefficients of `α(z)`.
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub p: Vec<Monomial>,
    #[serde(default)]
    pub q: Vec<Monomial>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OmegaSpec {
    /// Curve parameters per sign.
    pub count: usize,
    /// Parameter grid used for the crown norms.
    pub grid: usize,
    /// `[lo, hi]` range of `|ω|` for curves; `(1e−4·R², 0.9·R²)` when absent.
    pub window: Option<[f64; 2]>,
}

impl Default for OmegaSpec {
    fn default() -> Self {
        Self { count: DEFAULT_OMEGA_COUNT, grid: DEFAULT_NORM_GRID, window: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub divisor_floor: f64,
    pub degeneracy_tol: f64,
    pub convergence_floor: f64,
    pub structural_tol: f64,
    pub realness_tol: f64,
    pub root_tol: f64,
    pub conjugacy_tol: f64,
    pub equivariance_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            divisor_floor: DEFAULT_DIVISOR_FLOOR,
            degeneracy_tol: DEFAULT_DEGENERACY_TOL,
            convergence_floor: DEFAULT_CONVERGENCE_FLOOR,
            structural_tol: DEFAULT_STRUCTURAL_TOL,
            realness_tol: DEFAULT_REALNESS_TOL,
            root_tol: DEFAULT_ROOT_TOL,
            conjugacy_tol: DEFAULT_CONJUGACY_TOL,
            equivariance_tol: DEFAULT_EQUIVARIANCE_TOL,
        }
    }
}

impl Tolerances {
    fn named(&self) -> [(&'static str, f64); 8] {
        [
            ("divisor_floor", self.divisor_floor),
            ("degeneracy_tol", self.degeneracy_tol),
            ("convergence_floor", self.convergence_floor),
            ("structural_tol", self.structural_tol),
            ("realness_tol", self.realness_tol),
            ("root_tol", self.root_tol),
            ("conjugacy_tol", self.conjugacy_tol),
            ("equivariance_tol", self.equivariance_tol),
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
}

fn config_error(path: impl Into<String>, message: impl Into<String>) -> KamError {
    KamError::Config { path: path.into(), message: message.into() }
}

impl RunConfig {
    /// Parses and validates; parse errors carry the JSON path of the offending field.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "<root>".to_string() } else { path };
            config_error(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_error("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Bundled fixtures: `linear` (unperturbed quadric) and `cubic`.
    pub fn fixture(name: &str) -> Result<Self> {
        match name {
            "linear" => Self::from_json_str(LINEAR_FIXTURE),
            "cubic" => Self::from_json_str(CUBIC_FIXTURE),
            other => Err(config_error("--seed-fixture", format!("unknown fixture `{other}` (expected linear or cubic)"))),
        }
    }

    pub fn degree(&self) -> usize {
        match &self.input {
            InputSpec::Surface(s) => s.degree,
            InputSpec::Pair(p) => p.degree,
        }
    }

    pub fn set_degree(&mut self, d: usize) {
        match &mut self.input {
            InputSpec::Surface(s) => s.degree = d,
            InputSpec::Pair(p) => p.degree = d,
        }
    }

    pub fn order(&self) -> usize {
        self.order.unwrap_or_else(|| default_order(self.s_hint.unwrap_or(1)))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.tolerances.named() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_error(format!("tolerances.{name}"), format!("must be positive, got {v}")));
            }
        }
        if let Some(s) = self.s_hint {
            if s == 0 {
                return Err(config_error("s_hint", "must be at least 1"));
            }
        }
        let d = self.degree();
        let n = self.order();
        if d < 2 * (2 * n + 2) {
            let at = if self.order.is_some() { "order" } else { "input.degree" };
            return Err(config_error(
                at,
                format!("truncation degree {d} is below 2(2N+2) = {} for N = {n}", 2 * (2 * n + 2)),
            ));
        }
        match &self.input {
            InputSpec::Surface(s) => {
                if !(s.gamma > 0.5 && s.gamma.is_finite()) {
                    return Err(config_error("input.surface.gamma", format!("{} is not in the hyperbolic range > 1/2", s.gamma)));
                }
                check_terms(&s.terms, d, 3, "input.surface.terms")?;
            }
            InputSpec::Pair(p) => {
                if p.alpha.is_empty() || p.alpha.iter().any(|a| !a.is_finite()) {
                    return Err(config_error("input.pair.alpha", "needs at least the constant term, all finite"));
                }
                check_terms(&p.p, d, 2, "input.pair.p")?;
                check_terms(&p.q, d, 2, "input.pair.q")?;
            }
        }
        if self.omega.count == 0 {
            return Err(config_error("omega.count", "must be at least 1"));
        }
        if self.omega.grid == 0 {
            return Err(config_error("omega.grid", "must be at least 1"));
        }
        if let Some([lo, hi]) = self.omega.window {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return Err(config_error("omega.window", format!("need 0 < lo < hi, got [{lo}, {hi}]")));
            }
        }
        if self.curve_samples == 0 {
            return Err(config_error("curve_samples", "must be at least 1"));
        }
        Ok(())
    }
}

fn check_terms(terms: &[Monomial], degree: usize, min_total: usize, path: &str) -> Result<()> {
    for (i, t) in terms.iter().enumerate() {
        let total = t.m + t.n;
        if total < min_total || total > degree {
            return Err(config_error(
                format!("{path}[{i}]"),
                format!("total degree {total} outside {min_total}..={degree}"),
            ));
        }
        if !(t.re.is_finite() && t.im.is_finite()) {
            return Err(config_error(format!("{path}[{i}]"), "coefficient is not finite"));
        }
    }
    Ok(())
}

fn monomial_series(terms: &[Monomial], degree: usize) -> CrownSeries<f64> {
    let mut s = CrownSeries::zeros(degree);
    for t in terms {
        s.add_to(t.m, t.n, C::new(t.re, t.im));
    }
    s
}

// ---------------------------------------------------------------------------
// build

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildRecord {
    pub source: String,
    pub gamma: Option<f64>,
    pub lambda: f64,
    pub degree: usize,
    pub structural: StructuralReport,
    pub checks: Vec<BoundCheck>,
}

/// Domain on which structural residuals of unnormalized pairs are measured.
fn structural_domain() -> CrownDomain<f64> {
    let r = DEFAULT_START_RADIUS;
    let beta = r * r / 8.0;
    CrownDomain::new(omega_grid(r, beta, 5), beta, r)
}

fn structural_checks(prefix: &str, rep: &StructuralReport, tol: f64) -> Vec<BoundCheck> {
    vec![
        BoundCheck::new(format!("{prefix}_involution"), rep.involution, tol),
        BoundCheck::new(format!("{prefix}_tau2_involution"), rep.tau2_involution, tol),
        BoundCheck::new(format!("{prefix}_reversibility"), rep.reversibility, tol),
    ]
}

/// The original pair `τ₁ᵒ` in diagonal coordinates.
pub fn build_pair(cfg: &RunConfig) -> Result<(InvolutionPair<f64>, BuildRecord)> {
    let (pair, source, gamma) = match &cfg.input {
        InputSpec::Surface(s) => {
            let m = BishopSurface::from_monomials(s.gamma, s.degree, &s.terms)?;
            let (_, t) = diagonalize(&m)?;
            (t, "surface", Some(s.gamma))
        }
        InputSpec::Pair(p) => {
            let alpha = CoeffSeries::from_real(p.degree / 2, &p.alpha);
            let t = InvolutionPair::new(
                alpha,
                monomial_series(&p.p, p.degree),
                monomial_series(&p.q, p.degree),
                cfg.s_hint.unwrap_or(1),
            )?;
            (t, "pair", None)
        }
    };
    let rec = build_record(&pair, source, gamma, cfg.tolerances.structural_tol)?;
    Ok((pair, rec))
}

fn build_record(pair: &InvolutionPair<f64>, source: &str, gamma: Option<f64>, tol: f64) -> Result<BuildRecord> {
    let structural = structural_residuals(pair, &ResidualParams::simple(structural_domain()))?;
    let checks = structural_checks("original", &structural, tol);
    Ok(BuildRecord { source: source.into(), gamma, lambda: pair.lambda(), degree: pair.degree(), structural, checks })
}

// ---------------------------------------------------------------------------
// state

/// One transform of the chain with the `Θ` used in its scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainLink {
    pub psi: SeriesMap<f64>,
    pub theta: CoeffSeries<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RunStatus {
    Running,
    MaxRounds,
    ConvergedToTruncation { nu: usize, perturbation: f64, skew: f64 },
    StepFailed { nu: usize, message: String },
    EmptyParameterSet { nu: usize },
}

impl RunStatus {
    pub fn is_failure(&self) -> bool {
        matches!(self, RunStatus::StepFailed { .. } | RunStatus::EmptyParameterSet { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            RunStatus::Running => "running",
            RunStatus::MaxRounds => "max-rounds",
            RunStatus::ConvergedToTruncation { .. } => "converged-to-truncation",
            RunStatus::StepFailed { .. } => "step-failed",
            RunStatus::EmptyParameterSet { .. } => "empty-parameter-set",
        }
    }
}

/// Per-round sieve and step bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub nu: usize,
    pub r: f64,
    pub r_plus: f64,
    pub beta: f64,
    pub beta_plus: f64,
    pub eps: f64,
    pub skew: f64,
    pub k_index: usize,
    pub delta_step: f64,
    pub delta_sieve: f64,
    /// Real Taylor coefficients of `α_ν` used by the sieve.
    pub alpha: Vec<f64>,
    pub grid_size: usize,
    pub surviving_measure: f64,
    pub exclusion: ExclusionMeasure,
    pub resonance_sum_bound: f64,
    /// Largest `‖(α₊ − α)^{(k)}‖` against `ε^{1/3}`; reported, the scaled form is in the step checks.
    pub alpha_error: BoundCheck,
    pub practical_pass: bool,
    pub verbatim_pass: bool,
}

impl RoundRecord {
    pub fn sieve_row(&self) -> SieveRow {
        SieveRow {
            nu: self.nu,
            surviving_measure: self.surviving_measure,
            excluded_measure: self.exclusion.measured,
            paper_bound_mes: self.exclusion.bound_mes,
            paper_bound_pyartli: self.resonance_sum_bound,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KamState {
    pub nu: usize,
    pub mode: Mode,
    pub s: usize,
    pub degree: usize,
    pub geom: Option<StepGeometry>,
    pub pair: InvolutionPair<f64>,
    pub o: IntervalSet<f64>,
    pub chain: Vec<ChainLink>,
    pub history: Vec<StepReport>,
    pub rounds: Vec<RoundRecord>,
    /// `Ψ̌`: normalization maps, real-form scaling and, in the large-skew case, the preliminary step.
    pub prelude: TransformChain,
    /// The pair before any conjugation; `σ_o = τ₁∘τ₂` is evaluated from it.
    pub original: InvolutionPair<f64>,
    pub r0: f64,
    pub radii: Vec<f64>,
    pub betas: Vec<f64>,
    /// Measured `ε` at every visited crown.
    pub eps: Vec<f64>,
    pub skews: Vec<f64>,
    pub status: RunStatus,
    pub grid: usize,
    pub convergence_floor: f64,
    pub excise: ExciseOptions,
}

impl KamState {
    pub fn r_final(&self) -> f64 {
        self.radii[self.nu]
    }

    pub fn beta_final(&self) -> f64 {
        self.betas[self.nu]
    }

    /// Parameter grid of the crown `(r, β)` kept by the current surviving set.
    pub fn grid_at(&self, r: f64, beta: f64) -> Vec<f64> {
        self.o.filter_points(&omega_grid(r, beta, self.grid))
    }

    /// `Ψ̌∘ψ₀∘…∘ψ_ν` as a pointwise transform.
    pub fn full_chain(&self) -> TransformChain {
        let mut t = self.prelude.clone();
        for l in &self.chain {
            t.push(l.psi.clone());
        }
        t
    }

    fn measure_current(&self) -> Result<(f64, f64)> {
        let (r, beta) = (self.radii[self.nu], self.betas[self.nu]);
        let grid = self.grid_at(r, beta);
        let dom = crown_domain(&grid, beta, r, DEFAULT_BOUNDARY_SAMPLES)?;
        Ok((step_eps(&self.pair, &dom)?, dom.norm(&skew_term(&self.pair)?)?))
    }
}

// ---------------------------------------------------------------------------
// prepare

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factorizations {
    /// `Ψ̌` and chain with the preliminary step folded into `Ψ̌` (the one used).
    pub folded: [Vec<String>; 2],
    /// The same maps with the preliminary step counted as the first chain element.
    pub unfolded: [Vec<String>; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareRecord {
    pub mode: Mode,
    pub build: BuildRecord,
    pub normalization: NormalizationReport,
    pub order: usize,
    pub s: usize,
    pub s_source: String,
    pub branch: Branch,
    pub a: f64,
    pub r_star: f64,
    /// Schedule start from the radius search (`A` or `A^{49/50}`).
    pub eps0_schedule: f64,
    /// Measured `ε` on `(O₀, β₀, r₀)`.
    pub eps0: f64,
    pub r0: f64,
    pub beta0: f64,
    pub preliminary: Option<StepReport>,
    pub factorizations: Factorizations,
    pub hypotheses: Vec<BoundCheck>,
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|j| j as f64).product()
}

fn sup_on_grid(h: &CoeffSeries<f64>, grid: &[f64], beta: f64) -> f64 {
    grid.iter().fold(0.0, |m: f64, &w| m.max(h.sup_on_circle(w, beta, DEFAULT_BOUNDARY_SAMPLES)))
}

/// The starting hypotheses of the iteration measured on `(grid, β, r)`.
pub fn start_hypotheses(t: &InvolutionPair<f64>, grid: &[f64], beta: f64, r: f64, eps0: f64) -> Result<Vec<BoundCheck>> {
    let s = t.s_order.max(1);
    let alpha = &t.alpha;
    let lam = t.lambda();
    let tau = std::f64::consts::TAU;
    let on_grid = |f: &dyn Fn(f64) -> f64| grid.iter().fold(0.0, |m: f64, &w| m.max(f(w)));
    let mut checks = vec![
        BoundCheck::new("alpha_bdd-0", on_grid(&|w| (alpha.eval_re(w) - 2.0 * std::f64::consts::PI).abs()), std::f64::consts::PI * 2.0 + 0.125),
        BoundCheck::new("alpha_bdd-c-0", sup_on_grid(alpha, grid, beta), 2.0 * tau + 0.25),
        BoundCheck::new("alpha0_lambda", on_grid(&|w| (alpha.eval_re(w) - lam).abs()), 0.25),
    ];
    let mut d = alpha.clone();
    let mut high: f64 = 0.0;
    for k in 1..=(16 * s).min(alpha.dz()) {
        d = d.derivative();
        if k < s {
            checks.push(BoundCheck::new(format!("Ds-0_k{k}"), sup_on_grid(&d, grid, beta), 1.0 / 16.0));
        } else if k == s {
            let shifted = &d - &CoeffSeries::constant(C::new(factorial(s), 0.0), d.dz());
            checks.push(BoundCheck::new("Ds0", sup_on_grid(&shifted, grid, beta), factorial(s) / 16.0));
        } else {
            high = high.max(sup_on_grid(&d, grid, beta));
        }
    }
    checks.push(BoundCheck::new("Ds+0", high, 0.25 / r));
    let dom = crown_domain(grid, beta, r, DEFAULT_BOUNDARY_SAMPLES)?;
    checks.push(BoundCheck::new("esti_pq_sec4_p", dom.norm(&t.p)?, eps0 / 10.0));
    checks.push(BoundCheck::new("esti_pq_sec4_q", dom.norm(&t.q)?, eps0 / 10.0));
    checks.push(BoundCheck::new("esti_pq_sec4_skew", dom.norm(&skew_term(t)?)?, eps0.powf(1.5) / 3.0));
    Ok(checks)
}

/// Surface (or pair) to the state at `ν = 0`, including the preliminary step when the skew term is large.
pub fn prepare(cfg: &RunConfig) -> Result<(KamState, PrepareRecord)> {
    let (original, build) = build_pair(cfg).stage("build")?;
    prepare_built(cfg, original, build)
}

/// [`prepare`] for a pair constructed by the caller; the input section of `cfg` is ignored.
pub fn prepare_pair(cfg: &RunConfig, original: InvolutionPair<f64>) -> Result<(KamState, PrepareRecord)> {
    let build = build_record(&original, "caller", None, cfg.tolerances.structural_tol).stage("build")?;
    prepare_built(cfg, original, build)
}

fn prepare_built(cfg: &RunConfig, original: InvolutionPair<f64>, build: BuildRecord) -> Result<(KamState, PrepareRecord)> {
    let n = cfg.order();
    let tol = &cfg.tolerances;
    let prep = normalize(&original, n, tol.divisor_floor, tol.degeneracy_tol, cfg.mode).stage("prenormal")?;
    let mut normalization = prep.report;
    let (s, s_source) = match (normalization.nondegeneracy.s(), cfg.s_hint) {
        (Some(s), _) => (s, "detected"),
        (None, Some(h)) => (h, "hint"),
        (None, None) => {
            return Err(KamError::Structural(
                "the normal form is degenerate to the computed order; supply s_hint".into(),
            )
            .in_stage("prenormal"))
        }
    };
    let mut pair = prep.pair;
    pair.s_order = s;
    let grid = cfg.omega.grid;
    let opts = RadiusOptions { mode: cfg.mode, omega_count: grid, ..RadiusOptions::default() };
    let radius = radius_search(&pair, &opts).stage("radius search")?;
    normalization.radius = Some(radius.clone());

    let mut prelude = prep.chain;
    let mut labels: Vec<String> = (0..prelude.len().saturating_sub(1)).map(|k| format!("poincare_dulac_{k}")).collect();
    labels.push("realform_scaling".into());
    let r_star = radius.r_star;
    let (r0, beta0, preliminary) = match radius.branch {
        Branch::Case1 => {
            let beta = match cfg.mode {
                Mode::Practical => radius.beta_star,
                Mode::Rigorous => radius.a.powf(1.0 / (40.0 * s as f64)),
            };
            (r_star, beta, None)
        }
        Branch::Case2 => {
            let r_plus = 0.75 * r_star;
            let geom = match cfg.mode {
                Mode::Practical => {
                    let bp = radius.beta_star.powf(1.25);
                    let omegas = omega_grid(r_plus, bp, grid);
                    StepGeometry::practical(
                        radius.a * EPS_MARGIN,
                        s,
                        r_star,
                        r_plus,
                        radius.beta_star,
                        &pair.alpha,
                        &omegas,
                        pair.degree(),
                    )
                }
                Mode::Rigorous => StepGeometry::rigorous(radius.a * EPS_MARGIN, s, r_star, r_plus),
            }
            .stage("preliminary step")?;
            let omegas = omega_grid(r_plus, geom.beta_plus, grid);
            let out = main_step(&pair, &geom, &omegas).stage("preliminary step")?;
            pair = out.pair;
            prelude.push(out.psi);
            (r_plus, geom.beta_plus, Some(out.report))
        }
    };
    let factorizations = if preliminary.is_some() {
        let mut folded = labels.clone();
        folded.push("preliminary_step".into());
        Factorizations { folded: [folded, vec![]], unfolded: [labels, vec!["preliminary_step".into()]] }
    } else {
        Factorizations { folded: [labels.clone(), vec![]], unfolded: [labels, vec![]] }
    };

    let o = IntervalSet::interval(-(r0 * r0 - beta0), r0 * r0 - beta0);
    let grid0 = o.filter_points(&omega_grid(r0, beta0, grid));
    let dom = crown_domain(&grid0, beta0, r0, DEFAULT_BOUNDARY_SAMPLES).stage("prepare")?;
    let eps0 = step_eps(&pair, &dom)?;
    let hypotheses = start_hypotheses(&pair, &grid0, beta0, r0, eps0.max(f64::MIN_POSITIVE))?;

    let state = KamState {
        nu: 0,
        mode: cfg.mode,
        s,
        degree: pair.degree(),
        geom: None,
        pair,
        o,
        chain: Vec::new(),
        history: Vec::new(),
        rounds: Vec::new(),
        prelude,
        original,
        r0,
        radii: vec![r0],
        betas: vec![beta0],
        eps: Vec::new(),
        skews: Vec::new(),
        status: RunStatus::Running,
        grid,
        convergence_floor: tol.convergence_floor,
        excise: ExciseOptions { grid_per_unit: DEFAULT_GRID_PER_UNIT, root_tol: tol.root_tol },
    };
    let rec = PrepareRecord {
        mode: cfg.mode,
        build,
        normalization,
        order: n,
        s,
        s_source: s_source.into(),
        branch: radius.branch,
        a: radius.a,
        r_star,
        eps0_schedule: radius.eps0,
        eps0,
        r0,
        beta0,
        preliminary,
        factorizations,
        hypotheses,
    };
    Ok((state, rec))
}

// ---------------------------------------------------------------------------
// iterate

enum RoundEnd {
    Continue,
    Stop(RunStatus),
}

fn run_round(state: &mut KamState) -> Result<RoundEnd> {
    let nu = state.nu;
    let (r, beta) = (state.radii[nu], state.betas[nu]);
    let (eps, skew) = match state.measure_current() {
        Ok(v) => v,
        Err(KamError::EmptyParameterSet) => return Ok(RoundEnd::Stop(RunStatus::EmptyParameterSet { nu })),
        Err(e) => return Err(e),
    };
    state.eps.push(eps);
    state.skews.push(skew);
    let pert = eps / (10.0 * EPS_MARGIN);
    if pert < state.convergence_floor || skew < state.convergence_floor {
        return Ok(RoundEnd::Stop(RunStatus::ConvergedToTruncation { nu, perturbation: pert, skew }));
    }
    let s = state.s;
    let d = state.degree;
    let r_next = r - state.r0 / 2f64.powi(nu as i32 + 2);
    let (geom, out_grid) = match state.mode {
        Mode::Practical => {
            let bp = beta.powf(1.25);
            let out_grid = state.grid_at(r_next, bp);
            if out_grid.is_empty() {
                return Ok(RoundEnd::Stop(RunStatus::EmptyParameterSet { nu }));
            }
            (StepGeometry::practical(eps, s, r, r_next, beta, &state.pair.alpha, &out_grid, d)?, out_grid)
        }
        Mode::Rigorous => {
            let g = StepGeometry::rigorous(eps, s, r, r_next)?;
            let out_grid = state.grid_at(r_next, g.beta_plus);
            (g, out_grid)
        }
    };
    let beta_next = geom.beta_plus;
    let k_index = geom.k_index(d);
    let delta_rule = eps.powf(1.0 / (64.0 * s as f64));
    let delta_sieve = match state.mode {
        Mode::Practical => delta_rule.min(geom.delta),
        Mode::Rigorous => delta_rule,
    };
    let rr = r_next * r_next;
    let clipped = state.o.clip(-rr, rr);
    let after = excise_resonances(&clipped, &state.pair.alpha, k_index as f64, delta_sieve, &state.excise);
    let w = rr - beta_next;
    let exclusion = measure_excluded(&state.o, &after, (-w, w), eps, s)?;
    let kept = after.filter_points(&out_grid);
    if after.is_empty() || kept.is_empty() {
        return Ok(RoundEnd::Stop(RunStatus::EmptyParameterSet { nu }));
    }
    let out = main_step(&state.pair, &geom, &kept)?;
    let rep = out.report;
    let alpha_err = rep.alpha_diff.iter().fold(0.0, |m: f64, v| m.max(*v));
    state.rounds.push(RoundRecord {
        nu,
        r,
        r_plus: r_next,
        beta,
        beta_plus: beta_next,
        eps,
        skew,
        k_index,
        delta_step: geom.delta,
        delta_sieve,
        alpha: state.pair.alpha.coeffs().iter().map(|c| c.re).collect(),
        grid_size: kept.len(),
        surviving_measure: after.measure(),
        exclusion,
        resonance_sum_bound: resonance_sum_bound(k_index as f64, eps, s),
        alpha_error: BoundCheck::new("error_alpha-nu", alpha_err, eps.powf(1.0 / 3.0)),
        practical_pass: rep.practical_pass(),
        verbatim_pass: rep.verbatim_pass(),
    });
    state.chain.push(ChainLink { psi: out.psi, theta: out.theta });
    state.history.push(rep);
    state.pair = out.pair;
    state.o = after;
    state.radii.push(r_next);
    state.betas.push(beta_next);
    state.geom = Some(geom);
    state.nu += 1;
    Ok(RoundEnd::Continue)
}

/// Runs rounds until `max_nu`, convergence to the truncation floor, or a failure,
/// which is recorded in `state.status` rather than returned.
pub fn iterate_recorded(mut state: KamState, max_nu: usize) -> KamState {
    state.status = RunStatus::Running;
    while state.nu < max_nu {
        let nu = state.nu;
        match run_round(&mut state) {
            Ok(RoundEnd::Continue) => {}
            Ok(RoundEnd::Stop(st)) => {
                state.status = st;
                break;
            }
            Err(e) => {
                state.status = RunStatus::StepFailed { nu, message: e.to_string() };
                break;
            }
        }
    }
    if state.status == RunStatus::Running {
        state.status = RunStatus::MaxRounds;
    }
    if state.eps.len() == state.nu {
        if let Ok((e, k)) = state.measure_current() {
            state.eps.push(e);
            state.skews.push(k);
        }
    }
    state
}

/// [`iterate_recorded`] with failures turned into errors.
pub fn iterate(state: KamState, max_nu: usize) -> Result<KamState> {
    let st = iterate_recorded(state, max_nu);
    match &st.status {
        RunStatus::EmptyParameterSet { .. } => Err(KamError::EmptyParameterSet.in_stage("iterate")),
        RunStatus::StepFailed { message, .. } => Err(KamError::Structural(message.clone()).in_stage("iterate")),
        _ => Ok(st),
    }
}

// ---------------------------------------------------------------------------
// curves

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub theta: f64,
    pub xi: [f64; 2],
    pub eta: [f64; 2],
    /// `Ψ_ω(ξ, η)`.
    pub x: [f64; 2],
    pub y: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveResult {
    pub omega: f64,
    pub mu_omega: f64,
    pub conjugacy_residual: f64,
    pub equivariance_residual: f64,
    pub mu_in_window: bool,
    pub chain_tail: f64,
    pub samples: Vec<CurveSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub omega: f64,
    pub mu_omega: f64,
    pub conjugacy_residual: f64,
    pub equivariance_residual: f64,
    pub mu_in_window: bool,
    pub chain_tail: f64,
}

impl CurveResult {
    pub fn summary(&self) -> CurveSummary {
        CurveSummary {
            omega: self.omega,
            mu_omega: self.mu_omega,
            conjugacy_residual: self.conjugacy_residual,
            equivariance_residual: self.equivariance_residual,
            mu_in_window: self.mu_in_window,
            chain_tail: self.chain_tail,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcludedOmega {
    pub omega: f64,
    pub reason: String,
    pub round: Option<usize>,
    pub order: Option<i64>,
}

fn pair_c(z: C) -> [f64; 2] {
    [z.re, z.im]
}

/// `Σ_{j≥1} (ε^{(5/4)^j})^{4/5}`: the remaining chain increments if the last measured `ε` keeps contracting.
pub fn chain_tail(eps_last: f64) -> f64 {
    if !(eps_last > 0.0 && eps_last < 1.0) {
        return if eps_last == 0.0 { 0.0 } else { f64::INFINITY };
    }
    let mut e = eps_last;
    let mut sum = 0.0;
    for _ in 0..200 {
        e = e.powf(1.25);
        let term = e.powf(0.8);
        if term < 1e-300 {
            break;
        }
        sum += term;
    }
    sum
}

/// `σ_o = τ₁ᵒ∘τ₂ᵒ` evaluated pointwise.
pub fn sigma_original(t: &InvolutionPair<f64>, xi: C, eta: C) -> (C, C) {
    let (a, b) = t.eval_tau2(xi, eta);
    t.eval_tau1(a, b)
}

/// Samples `Ψ_ω` on `{ξη = ω}` and measures the conjugacy to the rotation by `μ_ω`.
pub fn extract_curve(state: &KamState, omega: f64, n_pts: usize) -> Result<CurveResult> {
    let r = state.r_final();
    if !(omega.abs() < r * r) {
        return Err(KamError::OmegaOutOfRange(omega, format!("no curve inside the radius {r}")));
    }
    if !state.o.contains(omega) {
        return Err(KamError::OmegaOutOfRange(omega, "removed by the parameter sieve".into()));
    }
    if n_pts == 0 {
        return Err(KamError::InsufficientData("n_pts must be positive".into()));
    }
    let mu = state.pair.alpha.eval_re(omega);
    let psi = state.full_chain();
    let rho = omega.abs().sqrt();
    let sign = if omega < 0.0 { -1.0 } else { 1.0 };
    let rot = C::from_polar(1.0, mu);
    let mut samples = Vec::with_capacity(n_pts);
    let (mut conj_res, mut eq_res): (f64, f64) = (0.0, 0.0);
    for k in 0..n_pts {
        let theta = std::f64::consts::TAU * (k as f64 + 0.5) / n_pts as f64;
        let xi = C::from_polar(rho, theta);
        let eta = C::from_polar(rho, -theta) * sign;
        let (x, y) = psi.apply(xi, eta)?;
        let (sx, sy) = sigma_original(&state.original, x, y);
        let (rx, ry) = psi.apply(rot * xi, eta / rot)?;
        conj_res = conj_res.max((sx - rx).norm()).max((sy - ry).norm());
        let (cx, cy) = psi.apply(xi.conj(), eta.conj())?;
        eq_res = eq_res.max((cx - x.conj()).norm()).max((cy - y.conj()).norm());
        samples.push(CurveSample { theta, xi: pair_c(xi), eta: pair_c(eta), x: pair_c(x), y: pair_c(y) });
    }
    let lam = state.original.lambda();
    Ok(CurveResult {
        omega,
        mu_omega: mu,
        conjugacy_residual: conj_res,
        equivariance_residual: eq_res,
        mu_in_window: (mu - lam).abs() < std::f64::consts::FRAC_PI_4,
        chain_tail: chain_tail(state.eps.last().copied().unwrap_or(0.0)),
        samples,
    })
}

/// `count` log-spaced `|ω|` per sign in the window, negatives first.
pub fn default_omegas(state: &KamState, spec: &OmegaSpec) -> Vec<f64> {
    let r2 = state.r_final().powi(2);
    let [lo, hi] = spec.window.unwrap_or([1e-4 * r2, 0.9 * r2]);
    let n = spec.count;
    let mags: Vec<f64> = if n == 1 {
        vec![(lo * hi).sqrt()]
    } else {
        (0..n).map(|j| lo * (hi / lo).powf(j as f64 / (n - 1) as f64)).collect()
    };
    mags.iter().rev().map(|m| -m).chain(mags.iter().copied()).collect()
}

fn exclusion_reason(state: &KamState, omega: f64) -> ExcludedOmega {
    let r = state.r_final();
    if !(omega.abs() < r * r) {
        return ExcludedOmega { omega, reason: "outside the final radius".into(), round: None, order: None };
    }
    for rec in &state.rounds {
        let alpha = CoeffSeries::from_real(rec.alpha.len().saturating_sub(1), &rec.alpha);
        if let Some(n) = resonance_order(&alpha, omega, rec.k_index + 1, rec.delta_sieve) {
            return ExcludedOmega { omega, reason: "resonance".into(), round: Some(rec.nu), order: Some(n) };
        }
    }
    ExcludedOmega { omega, reason: "outside the surviving set".into(), round: None, order: None }
}

/// Curves at every surviving `ω` (in parallel, merged in input order) and the excluded ones.
pub fn curves(state: &KamState, omegas: &[f64], n_pts: usize) -> Result<(Vec<CurveResult>, Vec<ExcludedOmega>)> {
    let r2 = state.r_final().powi(2);
    let (keep, drop): (Vec<f64>, Vec<f64>) = omegas.iter().partition(|w| w.abs() < r2 && state.o.contains(**w));
    let results: Vec<Result<CurveResult>> = keep.par_iter().map(|w| extract_curve(state, *w, n_pts)).collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let excluded = drop.iter().map(|w| exclusion_reason(state, *w)).collect();
    Ok((results, excluded))
}

// ---------------------------------------------------------------------------
// smoothness

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Smoothness {
    pub label: String,
    pub omegas: Vec<f64>,
    pub mu: Vec<f64>,
    /// `differences[k−1][j]` is the `k`-th divided difference on `ω_j..ω_{j+k}`.
    pub differences: Vec<Vec<f64>>,
    pub lipschitz: f64,
}

/// Divided differences of `ω ↦ μ_ω` up to order `min(3, count − 1)`.
pub fn smoothness_diagnostic(results: &[CurveResult]) -> Result<Smoothness> {
    let mut pts: Vec<(f64, f64)> = results.iter().map(|c| (c.omega, c.mu_omega)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if let Some(w) = pts.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(KamError::DuplicateOmega(w[0].0));
    }
    if pts.len() < 2 {
        return Err(KamError::InsufficientData(format!("{} curve(s), need at least 2", pts.len())));
    }
    let omegas: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let mu: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let mut differences = Vec::new();
    let mut prev = mu.clone();
    for k in 1..=3.min(pts.len() - 1) {
        let next: Vec<f64> = (0..prev.len() - 1).map(|j| (prev[j + 1] - prev[j]) / (omegas[j + k] - omegas[j])).collect();
        differences.push(next.clone());
        prev = next;
    }
    let lipschitz = differences[0].iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    Ok(Smoothness {
        label: "diagnostic: finite divided differences on the sampled parameters, not a Whitney norm".into(),
        omegas,
        mu,
        differences,
        lipschitz,
    })
}

// ---------------------------------------------------------------------------
// pipeline and report

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Build,
    Prenorm,
    Iterate,
    Curves,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalSummary {
    pub nu: usize,
    pub status: RunStatus,
    pub r: f64,
    pub beta: f64,
    pub eps: Vec<f64>,
    pub skew: Vec<f64>,
    pub surviving: IntervalSet<f64>,
    pub surviving_measure: f64,
    /// `|O ∩ [−R², R²]| / 2R²` at the final radius `R`.
    pub surviving_ratio: f64,
    /// Measured windowed exclusions summed over rounds, over `2R²`.
    pub exclusion_ratio: f64,
    /// Lost measure in `[−R², R²]` not covered by the windows, over `2R²`.
    pub boundary_ratio: f64,
    pub lambda: f64,
    pub alpha: Vec<f64>,
    pub structural: Option<StructuralReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub command: String,
    pub mode: Mode,
    pub config: RunConfig,
    pub build: Option<BuildRecord>,
    pub prepare: Option<PrepareRecord>,
    pub schedule: Option<Schedule<f64>>,
    pub feasibility: Option<Feasibility>,
    pub rounds: Vec<RoundRecord>,
    pub steps: Vec<StepReport>,
    pub final_state: Option<FinalSummary>,
    pub curves: Vec<CurveSummary>,
    pub excluded_omegas: Vec<ExcludedOmega>,
    pub smoothness: Option<Smoothness>,
    pub checks: Vec<BoundCheck>,
    pub pass: bool,
}

pub struct RunArtifacts {
    pub report: RunReport,
    pub state: Option<KamState>,
    pub curves: Vec<CurveResult>,
}

fn final_summary(state: &KamState) -> FinalSummary {
    let r = state.r_final();
    let r2 = r * r;
    let kept = state.o.clip(-r2, r2).measure();
    let excl: f64 = state.rounds.iter().map(|x| x.exclusion.measured).sum();
    // Each round only measures inside its window; the rest of [−R², R²] is boundary loss.
    let w0 = state.r0 * state.r0 - state.betas[0];
    let mut band = 2.0 * (r2 - w0).max(0.0);
    for rec in &state.rounds {
        band += 2.0 * (r2 - (rec.r_plus * rec.r_plus - rec.beta_plus)).max(0.0);
    }
    let structural = ResidualParams::simple(CrownDomain::new(
        omega_grid(r, state.beta_final(), 5),
        state.beta_final(),
        r,
    ));
    FinalSummary {
        nu: state.nu,
        status: state.status.clone(),
        r,
        beta: state.beta_final(),
        eps: state.eps.clone(),
        skew: state.skews.clone(),
        surviving: state.o.clone(),
        surviving_measure: state.o.measure(),
        surviving_ratio: kept / (2.0 * r2),
        exclusion_ratio: excl / (2.0 * r2),
        boundary_ratio: band / (2.0 * r2),
        lambda: state.pair.lambda(),
        alpha: state.pair.alpha.coeffs().iter().map(|c| c.re).collect(),
        structural: structural_residuals(&state.pair, &structural).ok(),
    }
}

/// The invariant suite run by `verify`.
pub fn verify_checks(cfg: &RunConfig, art: &RunArtifacts) -> Vec<BoundCheck> {
    let tol = &cfg.tolerances;
    let rep = &art.report;
    let mut out = Vec::new();
    if let Some(b) = &rep.build {
        out.extend(b.checks.iter().cloned());
    }
    if let Some(p) = &rep.prepare {
        out.extend(p.build.checks.iter().cloned());
        out.push(BoundCheck::new("nonresonant_residual", p.normalization.nonresonant_residual, 1e-10));
        out.push(BoundCheck::new("realform_imag", p.normalization.realform_max_imag, tol.realness_tol));
        for name in ["alpha0_lambda", "esti_pq_sec4_p", "esti_pq_sec4_q", "esti_pq_sec4_skew"] {
            if let Some(c) = p.hypotheses.iter().find(|c| c.name == name) {
                // a zero perturbation meets the ≤ form with equality
                let mut c = c.clone();
                c.pass = c.pass || (c.measured == 0.0 && c.bound == 0.0);
                out.push(c);
            }
        }
    }
    if let Some(st) = &art.state {
        out.push(BoundCheck::new("prelude_realness", st.prelude.max_imag(), tol.realness_tol));
        for (k, l) in st.chain.iter().enumerate() {
            out.push(BoundCheck::new(format!("chain_realness_{k}"), l.psi.max_imag(), tol.realness_tol));
        }
        for rec in &st.rounds {
            let pass = match st.mode {
                Mode::Practical => rec.practical_pass,
                Mode::Rigorous => rec.verbatim_pass,
            };
            out.push(BoundCheck::new(format!("step_pass_{}", rec.nu), if pass { 0.0 } else { 1.0 }, 0.5));
            if rec.exclusion.informative {
                out.push(BoundCheck::new(format!("mes_{}", rec.nu), rec.exclusion.measured, rec.exclusion.bound_mes));
            }
        }
        for (k, w) in st.eps.windows(2).enumerate() {
            out.push(BoundCheck::new(format!("eps_decrease_{k}"), w[1], w[0]));
        }
        for (k, w) in st.history.windows(2).enumerate() {
            out.push(BoundCheck::new(format!("chain_cauchy_{k}"), w[1].psi_norm, w[0].psi_norm));
        }
        out.push(BoundCheck::new("run_status", if st.status.is_failure() { 1.0 } else { 0.0 }, 0.5));
        if let Some(f) = &rep.final_state {
            if let Some(s) = &f.structural {
                out.extend(structural_checks("final", s, tol.structural_tol));
            }
        }
    }
    for c in &art.curves {
        out.push(BoundCheck::new(format!("conjugacy_{:+.6e}", c.omega), c.conjugacy_residual, tol.conjugacy_tol));
        out.push(BoundCheck::new(format!("equivariance_{:+.6e}", c.omega), c.equivariance_residual, tol.equivariance_tol));
        out.push(BoundCheck::new(
            format!("mu_window_{:+.6e}", c.omega),
            (c.mu_omega - art.state.as_ref().map(|s| s.original.lambda()).unwrap_or(0.0)).abs(),
            std::f64::consts::FRAC_PI_4,
        ));
    }
    out
}

/// Runs the pipeline up to `upto`.
pub fn run_pipeline(cfg: &RunConfig, upto: Stage, command: &str) -> Result<RunArtifacts> {
    let mut report = RunReport {
        name: cfg.name.clone(),
        command: command.into(),
        mode: cfg.mode,
        config: cfg.clone(),
        build: None,
        prepare: None,
        schedule: None,
        feasibility: None,
        rounds: Vec::new(),
        steps: Vec::new(),
        final_state: None,
        curves: Vec::new(),
        excluded_omegas: Vec::new(),
        smoothness: None,
        checks: Vec::new(),
        pass: false,
    };
    let mut art = RunArtifacts { report: report.clone(), state: None, curves: Vec::new() };
    if upto == Stage::Build {
        let (_, b) = build_pair(cfg).stage("build")?;
        report.build = Some(b);
    } else {
        let (state, rec) = prepare(cfg)?;
        let (sch, feas) = build_schedule(rec.s, rec.r0, rec.eps0_schedule.max(f64::MIN_POSITIVE), cfg.max_nu);
        report.schedule = Some(sch);
        report.feasibility = Some(feas);
        report.prepare = Some(rec);
        let state = if upto >= Stage::Iterate { iterate_recorded(state, cfg.max_nu) } else { state };
        if upto >= Stage::Iterate {
            report.rounds = state.rounds.clone();
            report.steps = state.history.clone();
            report.final_state = Some(final_summary(&state));
        }
        if upto >= Stage::Curves {
            let omegas = default_omegas(&state, &cfg.omega);
            let (res, excl) = curves(&state, &omegas, cfg.curve_samples).stage("curves")?;
            report.curves = res.iter().map(|c| c.summary()).collect();
            report.excluded_omegas = excl;
            report.smoothness = smoothness_diagnostic(&res).ok();
            art.curves = res;
        }
        art.state = Some(state);
    }
    art.report = report;
    let checks = verify_checks(cfg, &art);
    art.report.pass = checks.iter().all(|c| c.pass);
    art.report.checks = checks;
    Ok(art)
}

fn csv_err(e: csv::Error) -> KamError {
    KamError::Io(e.to_string())
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

/// Writes `run_report.json`, `state.json`, `steps.csv`, `sieve.csv`, `curves.csv`,
/// `curves_summary.csv` and `plotdata/` (whichever apply).
pub fn write_outputs(dir: &Path, art: &RunArtifacts) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let json = serde_json::to_string_pretty(&art.report).map_err(|e| KamError::Io(e.to_string()))?;
    let p = dir.join("run_report.json");
    fs::write(&p, json + "\n")?;
    written.push(p);
    if let Some(st) = &art.state {
        let p = dir.join("state.json");
        fs::write(&p, serde_json::to_string(st).map_err(|e| KamError::Io(e.to_string()))?)?;
        written.push(p);
        if !st.history.is_empty() || art.report.final_state.is_some() {
            let p = dir.join("steps.csv");
            let mut w = csv::Writer::from_path(&p).map_err(csv_err)?;
            w.write_record(StepReport::csv_header()).map_err(csv_err)?;
            for (nu, r) in st.history.iter().enumerate() {
                w.write_record(r.csv_record(nu)).map_err(csv_err)?;
            }
            w.flush()?;
            written.push(p);
            let p = dir.join("sieve.csv");
            let rows: Vec<SieveRow> = st.rounds.iter().map(|r| r.sieve_row()).collect();
            write_sieve_csv(&rows, fs::File::create(&p)?)?;
            written.push(p);
        }
    }
    if !art.curves.is_empty() {
        let p = dir.join("curves.csv");
        let mut w = csv::Writer::from_path(&p).map_err(csv_err)?;
        w.write_record(["omega", "k", "theta", "xi_re", "xi_im", "eta_re", "eta_im", "x_re", "x_im", "y_re", "y_im"])
            .map_err(csv_err)?;
        for c in &art.curves {
            for (k, s) in c.samples.iter().enumerate() {
                w.write_record(sample_record(Some(c.omega), k, s)).map_err(csv_err)?;
            }
        }
        w.flush()?;
        written.push(p);

        let p = dir.join("curves_summary.csv");
        let mut w = csv::Writer::from_path(&p).map_err(csv_err)?;
        for c in &art.curves {
            w.serialize(c.summary()).map_err(csv_err)?;
        }
        w.flush()?;
        written.push(p);

        let pd = dir.join("plotdata");
        fs::create_dir_all(&pd)?;
        for (i, c) in art.curves.iter().enumerate() {
            let p = pd.join(format!("curve_{i:03}.csv"));
            let mut w = csv::Writer::from_path(&p).map_err(csv_err)?;
            w.write_record(["k", "theta", "xi_re", "xi_im", "eta_re", "eta_im", "x_re", "x_im", "y_re", "y_im"])
                .map_err(csv_err)?;
            for (k, s) in c.samples.iter().enumerate() {
                w.write_record(sample_record(None, k, s)).map_err(csv_err)?;
            }
            w.flush()?;
            written.push(p);
        }
    }
    Ok(written)
}

fn sample_record(omega: Option<f64>, k: usize, s: &CurveSample) -> Vec<String> {
    let mut v = Vec::with_capacity(11);
    if let Some(w) = omega {
        v.push(fmt(w));
    }
    v.push(k.to_string());
    v.push(fmt(s.theta));
    for z in [s.xi, s.eta, s.x, s.y] {
        v.push(fmt(z[0]));
        v.push(fmt(z[1]));
    }
    v
}

// ---------------------------------------------------------------------------
// command line

#[derive(Parser, Debug)]
#[command(name = "kamhyp", version, about = "Invariant holomorphic hyperbolas near hyperbolic CR singularities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON); the KAM_CONFIG environment variable overrides it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "MODE")]
    mode: Option<Mode>,
    #[arg(long = "max-nu", global = true, value_name = "N")]
    max_nu: Option<usize>,
    /// Truncation degree D.
    #[arg(long, global = true, value_name = "D")]
    degree: Option<usize>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Bundled configuration instead of a file: linear or cubic.
    #[arg(long = "seed-fixture", global = true, value_name = "NAME")]
    seed_fixture: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Surface to involution pair.
    Build,
    /// Normal form, nondegeneracy and starting radius.
    Prenorm,
    /// The iteration.
    Iterate,
    /// The iteration, printing the parameter sieve table.
    Sieve,
    /// The iteration followed by curve extraction.
    Curves,
    /// Everything, exiting with 2 when any invariant check fails.
    Verify,
    /// Everything, writing all outputs.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Build => "build",
            Command::Prenorm => "prenorm",
            Command::Iterate => "iterate",
            Command::Sieve => "sieve",
            Command::Curves => "curves",
            Command::Verify => "verify",
            Command::Report => "report",
        }
    }

    fn stage(self) -> Stage {
        match self {
            Command::Build => Stage::Build,
            Command::Prenorm => Stage::Prenorm,
            Command::Iterate | Command::Sieve => Stage::Iterate,
            Command::Curves | Command::Verify | Command::Report => Stage::Curves,
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = if let Some(name) = &cli.seed_fixture {
        RunConfig::fixture(name)?
    } else {
        let env = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        match env.or_else(|| cli.config.clone()) {
            Some(p) => RunConfig::load(&p)?,
            None => {
                return Err(config_error("--config", "no configuration given (use --config, KAM_CONFIG or --seed-fixture)"))
            }
        }
    };
    if let Some(m) = cli.mode {
        cfg.mode = m;
    }
    if let Some(n) = cli.max_nu {
        cfg.max_nu = n;
    }
    if let Some(d) = cli.degree {
        cfg.set_degree(d);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code:
/// 0 on success, 2 on a structural failure, 3 on a configuration error.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
        }
    };
    let cfg = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let cmd = cli.command;
    let art = match run_pipeline(&cfg, cmd.stage(), cmd.name()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_STRUCTURAL;
        }
    };
    // --out stays out of the recorded config so the report does not depend on where it is written
    let dir = cli.out.clone().or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("kam_out"));
    if let Err(e) = write_outputs(&dir, &art) {
        eprintln!("error: {e}");
        return EXIT_STRUCTURAL;
    }
    print_summary(cmd, &art, &dir);
    if let Some(st) = &art.state {
        if cmd.stage() >= Stage::Iterate && st.status.is_failure() {
            return EXIT_STRUCTURAL;
        }
    }
    if cmd == Command::Verify && !art.report.pass {
        return EXIT_STRUCTURAL;
    }
    EXIT_OK
}

fn print_summary(cmd: Command, art: &RunArtifacts, dir: &Path) {
    let rep = &art.report;
    println!("{} [{}] mode={} -> {}", rep.name, cmd.name(), rep.mode.name(), dir.display());
    if let Some(p) = &rep.prepare {
        println!(
            "  lambda={:.12} s={} ({}) branch={:?} A={:e} r0={} eps0={:e}",
            p.normalization.lambda, p.s, p.s_source, p.branch, p.a, p.r0, p.eps0
        );
    }
    if let Some(st) = &art.state {
        println!("  status={} rounds={}", st.status.name(), st.nu);
        if cmd == Command::Sieve {
            println!("  nu  surviving  excluded  bound_mes  bound_sum");
            for r in &st.rounds {
                let row = r.sieve_row();
                println!(
                    "  {:>2}  {:.6e}  {:.3e}  {:.3e}  {:.3e}",
                    row.nu, row.surviving_measure, row.excluded_measure, row.paper_bound_mes, row.paper_bound_pyartli
                );
            }
        }
    }
    if !art.curves.is_empty() {
        let worst = art.curves.iter().fold(0.0, |m: f64, c| m.max(c.conjugacy_residual));
        println!("  curves={} max conjugacy residual={worst:e}", art.curves.len());
    }
    let failed: Vec<&str> = rep.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        println!("  checks: {} passed", rep.checks.len());
    } else {
        println!("  checks: {} of {} failed: {}", failed.len(), rep.checks.len(), failed.join(", "));
    }
}
