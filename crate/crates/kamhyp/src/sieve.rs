//! Parameter sets: unions of closed intervals, removal of small-divisor
//! resonances, measure bounds and the `ν`-indexed schedule of quantities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::scalar::{lit, to_f64};
use crate::series::CoeffSeries;
use crate::Real;

pub const DEFAULT_MERGE_TOL: f64 = 1e-13;
pub const DEFAULT_ROOT_TOL: f64 = 1e-12;
pub const DEFAULT_GRID_PER_UNIT: usize = 4096;
pub const MIN_GRID: usize = 100;

/// Sorted, pairwise disjoint closed intervals `[a, b]`, `a ≤ b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real", try_from = "Vec<[F; 2]>", into = "Vec<[F; 2]>")]
pub struct IntervalSet<F: Real> {
    intervals: Vec<[F; 2]>,
}

impl<F: Real> TryFrom<Vec<[F; 2]>> for IntervalSet<F> {
    type Error = KamError;

    fn try_from(v: Vec<[F; 2]>) -> Result<Self> {
        for [a, b] in &v {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return Err(KamError::Config { path: "intervals".into(), message: format!("invalid interval [{a}, {b}]") });
            }
        }
        Ok(Self::from_intervals(v))
    }
}

impl<F: Real> From<IntervalSet<F>> for Vec<[F; 2]> {
    fn from(s: IntervalSet<F>) -> Self {
        s.intervals
    }
}

impl<F: Real> IntervalSet<F> {
    pub fn empty() -> Self {
        Self { intervals: Vec::new() }
    }

    pub fn interval(a: F, b: F) -> Self {
        Self::from_intervals(vec![[a, b]])
    }

    /// Sorts and merges intervals whose gap is at most the merge tolerance; drops `a > b`.
    pub fn from_intervals(v: Vec<[F; 2]>) -> Self {
        let tol = lit::<F>(DEFAULT_MERGE_TOL);
        let mut v: Vec<[F; 2]> = v.into_iter().filter(|[a, b]| a <= b).collect();
        v.sort_by(|x, y| x[0].partial_cmp(&y[0]).unwrap().then(x[1].partial_cmp(&y[1]).unwrap()));
        let mut out: Vec<[F; 2]> = Vec::with_capacity(v.len());
        for [a, b] in v {
            match out.last_mut() {
                Some(last) if a - last[1] <= tol => last[1] = last[1].max(b),
                _ => out.push([a, b]),
            }
        }
        Self { intervals: out }
    }

    pub fn intervals(&self) -> &[[F; 2]] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn measure(&self) -> F {
        self.intervals.iter().fold(F::zero(), |s, [a, b]| s + (*b - *a))
    }

    pub fn contains(&self, x: F) -> bool {
        self.intervals.iter().any(|[a, b]| *a <= x && x <= *b)
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut v = self.intervals.clone();
        v.extend_from_slice(&other.intervals);
        Self::from_intervals(v)
    }

    pub fn intersection(&self, other: &Self) -> Self {
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < self.intervals.len() && j < other.intervals.len() {
            let [a, b] = self.intervals[i];
            let [c, d] = other.intervals[j];
            let lo = a.max(c);
            let hi = b.min(d);
            if lo <= hi {
                out.push([lo, hi]);
            }
            if b < d {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self::from_intervals(out)
    }

    /// Closure of `self \ other`.
    pub fn difference(&self, other: &Self) -> Self {
        let mut out = Vec::new();
        for &[a, b] in &self.intervals {
            let mut lo = a;
            for &[c, d] in &other.intervals {
                if d < lo || c > b {
                    continue;
                }
                if c > lo {
                    out.push([lo, c]);
                }
                lo = lo.max(d);
                if lo >= b {
                    break;
                }
            }
            if lo < b {
                out.push([lo, b]);
            }
        }
        let mut s = Self::from_intervals(out);
        s.intervals.retain(|[a, b]| b > a);
        s
    }

    pub fn clip(&self, a: F, b: F) -> Self {
        self.intersection(&Self::interval(a, b))
    }

    /// `true` when every point of `self` lies in `other` up to `tol`.
    pub fn is_subset_of(&self, other: &Self, tol: F) -> bool {
        self.difference(other).intervals.iter().all(|[a, b]| *b - *a <= tol)
    }

    /// Members of `points` inside the set, order preserved.
    pub fn filter_points(&self, points: &[F]) -> Vec<F> {
        points.iter().copied().filter(|w| self.contains(*w)).collect()
    }

    /// `count` equispaced points of each interval's interior share, proportional to length.
    pub fn sample(&self, count: usize) -> Vec<F> {
        let total = self.measure();
        if count == 0 || self.is_empty() {
            return Vec::new();
        }
        if total == F::zero() {
            return self.intervals.iter().map(|[a, _]| *a).take(count).collect();
        }
        let step = total / lit::<F>(count as f64);
        let mut out = Vec::with_capacity(count);
        let mut target = step * lit::<F>(0.5);
        let mut acc = F::zero();
        for &[a, b] in &self.intervals {
            let len = b - a;
            while target <= acc + len && out.len() < count {
                out.push(a + (target - acc));
                target += step;
            }
            acc += len;
        }
        out
    }
}

/// `|e^{inx} − 1|`.
pub fn divisor<F: Real>(n: i64, x: F) -> F {
    let h = lit::<F>(n as f64) * x * lit::<F>(0.5);
    (lit::<F>(2.0) * h.sin()).abs()
}

/// Smallest `n` in `1..=nmax` with `|e^{inα(ω)} − 1| < δ`.
pub fn resonance_order<F: Real>(alpha: &CoeffSeries<F>, omega: F, nmax: usize, delta: F) -> Option<i64> {
    let a = alpha.eval_re(omega);
    (1..=nmax as i64).find(|&n| divisor(n, a) < delta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExciseOptions {
    pub grid_per_unit: usize,
    pub root_tol: f64,
}

impl Default for ExciseOptions {
    fn default() -> Self {
        Self { grid_per_unit: DEFAULT_GRID_PER_UNIT, root_tol: DEFAULT_ROOT_TOL }
    }
}

/// Distance of `x` to `2πℤ`.
fn wrap_dist<F: Real>(x: F) -> F {
    let tau = F::TAU();
    (x - tau * (x / tau).round()).abs()
}

fn bad_intervals<F: Real>(alpha: &CoeffSeries<F>, n: i64, theta: F, o: &IntervalSet<F>, opts: &ExciseOptions) -> Vec<[F; 2]> {
    let nf = lit::<F>(n as f64);
    let f = |w: F| wrap_dist(nf * alpha.eval_re(w)) - theta;
    let root_tol = lit::<F>(opts.root_tol);
    let bisect = |mut lo: F, mut hi: F| {
        let flo_bad = f(lo) < F::zero();
        while hi - lo > root_tol {
            let mid = (lo + hi) * lit::<F>(0.5);
            if (f(mid) < F::zero()) == flo_bad {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo + hi) * lit::<F>(0.5)
    };
    let mut out = Vec::new();
    for &[a, b] in o.intervals() {
        let len = b - a;
        let pts = ((to_f64(len) * opts.grid_per_unit as f64).ceil() as usize).max(MIN_GRID);
        let h = len / lit::<F>(pts as f64);
        let mut start = if f(a) < F::zero() { Some(a) } else { None };
        let mut prev = a;
        let mut prev_bad = start.is_some();
        for i in 1..=pts {
            let w = if i == pts { b } else { a + h * lit::<F>(i as f64) };
            let bad = f(w) < F::zero();
            if bad != prev_bad {
                let root = bisect(prev, w);
                if bad {
                    start = Some(root);
                } else if let Some(s) = start.take() {
                    out.push([(s - root_tol).max(a), (root + root_tol).min(b)]);
                }
            }
            prev = w;
            prev_bad = bad;
        }
        if let Some(s) = start {
            out.push([(s - root_tol).max(a), b]);
        }
    }
    out
}

/// Removes `{ω : |e^{inα(ω)} − 1| < δ for some 0 < |n| ≤ K + 1}` from `o`.
pub fn excise_resonances<F: Real>(
    o: &IntervalSet<F>,
    alpha: &CoeffSeries<F>,
    k: F,
    delta: F,
    opts: &ExciseOptions,
) -> IntervalSet<F> {
    if !(delta > F::zero()) || o.is_empty() {
        return o.clone();
    }
    if delta >= lit::<F>(2.0) {
        return IntervalSet::empty();
    }
    let theta = lit::<F>(2.0) * (delta * lit::<F>(0.5)).asin();
    let nmax = to_f64(k).floor().max(0.0) as i64 + 1;
    let bad: Vec<Vec<[F; 2]>> = (1..=nmax).into_par_iter().map(|n| bad_intervals(alpha, n, theta, o, opts)).collect();
    let removed = IntervalSet::from_intervals(bad.into_iter().flatten().collect());
    o.difference(&removed)
}

/// `4(q!·A/(2δ))^{1/q}`.
pub fn pyartli_bound(q: u32, delta: f64, a: f64) -> f64 {
    let fact: f64 = (1..=q).map(|k| k as f64).product();
    4.0 * (fact * a / (2.0 * delta)).powf(1.0 / q as f64)
}

/// Measure of `{t ∈ [a, b] : |f(t)| ≤ level}` by midpoint counting with spacing `step`.
pub fn sublevel_measure(f: impl Fn(f64) -> f64, a: f64, b: f64, level: f64, step: f64) -> f64 {
    let n = ((b - a) / step).ceil().max(1.0) as usize;
    let h = (b - a) / n as f64;
    (0..n).filter(|&i| f(a + (i as f64 + 0.5) * h).abs() <= level).count() as f64 * h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExclusionMeasure {
    pub measured: f64,
    /// `ε^{1/(100s²)}`.
    pub bound_mes: f64,
    /// `ε^{1/(80s²)}`.
    pub bound_intermediate: f64,
    pub window: [f64; 2],
    /// `false` when the bound exceeds the window length, so the comparison says nothing.
    pub informative: bool,
}

/// `|(before \ after) ∩ window|` with the two analytic bounds at `ε`.
pub fn measure_excluded<F: Real>(
    before: &IntervalSet<F>,
    after: &IntervalSet<F>,
    window: (F, F),
    eps: f64,
    s: usize,
) -> Result<ExclusionMeasure> {
    if !after.is_subset_of(before, lit(DEFAULT_MERGE_TOL)) {
        return Err(KamError::Containment("surviving set is not contained in the previous set".into()));
    }
    let lost = before.difference(after).clip(window.0, window.1);
    let s2 = (s.max(1) * s.max(1)) as f64;
    let bound_mes = eps.powf(1.0 / (100.0 * s2));
    let len = to_f64(window.1 - window.0).max(0.0);
    Ok(ExclusionMeasure {
        measured: to_f64(lost.measure()),
        bound_mes,
        bound_intermediate: eps.powf(1.0 / (80.0 * s2)),
        window: [to_f64(window.0), to_f64(window.1)],
        informative: bound_mes < len,
    })
}

/// `Σ_{0<|n|≤K+1} |R_n| ≤ 40(K+1)^{2−1/s} ε^{1/(64s²)}`.
pub fn resonance_sum_bound(k: f64, eps: f64, s: usize) -> f64 {
    let sf = s.max(1) as f64;
    40.0 * (k + 1.0).powf(2.0 - 1.0 / sf) * eps.powf(1.0 / (64.0 * sf * sf))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct Schedule<F: Real> {
    pub s: usize,
    pub eps: Vec<F>,
    pub beta: Vec<F>,
    pub beta_tilde: Vec<F>,
    pub zeta: Vec<F>,
    pub r: Vec<F>,
    pub k: Vec<F>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    /// Left side of the smallness condition on `ε₀` (target: below 1).
    pub lhs: f64,
    pub rigorous_feasible: bool,
    /// Indices `ν` at which `β_ν > r_ν²/4`, so the desk-scale override applies.
    pub beta_override: Vec<usize>,
    pub zeta_sum: f64,
}

/// `(16s+1)^{16s}`-type smallness expression at `(ε, r, r₊)`.
pub fn smallness_lhs(eps: f64, s: usize, r: f64, r_plus: f64) -> f64 {
    let sf = s.max(1) as f64;
    let q = (7.0 / 8.0 + r_plus / (8.0 * r)).ln().abs();
    (eps.ln().abs() / q + 2.0) * (16.0 * sf + 1.0).powf(16.0 * sf) * eps.powf(1.0 / (2400.0 * sf * sf))
        / ((r - r_plus) * r_plus)
}

/// Sequences for `ν = 0..=max_nu` (radii to `max_nu + 1`).
pub fn build_schedule<F: Real>(s: usize, r0: F, eps0: F, max_nu: usize) -> (Schedule<F>, Feasibility) {
    let sf = lit::<F>(s.max(1) as f64);
    let one = F::one();
    let mut sch = Schedule {
        s,
        eps: Vec::new(),
        beta: Vec::new(),
        beta_tilde: Vec::new(),
        zeta: Vec::new(),
        r: Vec::new(),
        k: Vec::new(),
    };
    let mut eps = eps0;
    let mut zeta = eps0.powf(one / lit(3.0));
    let mut r = r0;
    for nu in 0..=max_nu {
        let r_next = r - r0 / lit::<F>(2f64.powi(nu as i32 + 2));
        sch.eps.push(eps);
        sch.beta.push(eps.powf(one / (lit::<F>(40.0) * sf)));
        sch.beta_tilde.push(lit::<F>(16.0) * eps.powf(one / (lit::<F>(32.0) * sf)));
        sch.zeta.push(zeta);
        sch.r.push(r);
        let ratio = (lit::<F>(7.0) * r + r_next) / (lit::<F>(8.0) * r);
        sch.k.push(eps.ln().abs() / ratio.ln().abs());
        zeta += eps.powf(one / lit(3.0));
        eps = eps.powf(lit(1.25));
        r = r_next;
    }
    sch.r.push(r);
    let r1 = to_f64(sch.r[1]);
    let lhs = smallness_lhs(to_f64(eps0), s, to_f64(r0), r1);
    let beta_override = (0..=max_nu).filter(|&nu| sch.beta[nu] > sch.r[nu] * sch.r[nu] / lit(4.0)).collect();
    let zeta_sum = sch.eps.iter().fold(0.0, |a, e| a + to_f64(*e).powf(1.0 / 3.0));
    (sch, Feasibility { lhs, rigorous_feasible: lhs < 1.0, beta_override, zeta_sum })
}

/// `min(β, r²/8)` whenever `β > r²/4`.
pub fn practical_beta_override(beta: f64, r: f64) -> (f64, bool) {
    if beta > r * r / 4.0 {
        (beta.min(r * r / 8.0), true)
    } else {
        (beta, false)
    }
}

/// One row of the per-round sieve table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SieveRow {
    pub nu: usize,
    pub surviving_measure: f64,
    pub excluded_measure: f64,
    pub paper_bound_mes: f64,
    pub paper_bound_pyartli: f64,
}

pub fn write_sieve_csv<W: std::io::Write>(rows: &[SieveRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| KamError::Io(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}
