use serde::{Deserialize, Serialize};

use super::crown::CrownSeries;
use crate::error::{KamError, Result};
use crate::scalar::{to_f64, Real};

pub const DEFAULT_BOUNDARY_SAMPLES: usize = 64;

/// Parameters `(ω, β, r)` of the crown `{|ξη − ω| ≤ β, |ξ|, |η| < r}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct CrownNormParams<F> {
    pub omega: F,
    pub beta: F,
    pub radius: F,
    pub boundary_samples: usize,
}

impl<F: Real> CrownNormParams<F> {
    pub fn new(omega: F, beta: F, radius: F) -> Self {
        Self { omega, beta, radius, boundary_samples: DEFAULT_BOUNDARY_SAMPLES }
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.boundary_samples = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > F::zero()) || !(self.beta >= F::zero()) {
            return Err(KamError::InvalidNormParams(format!(
                "radius {} and beta {} must be positive / non-negative",
                self.radius, self.beta
            )));
        }
        if self.boundary_samples < 8 && self.beta > F::zero() {
            return Err(KamError::InvalidNormParams(format!(
                "boundary_samples = {} below 8",
                self.boundary_samples
            )));
        }
        let limit = self.radius * self.radius - self.beta;
        if !(self.omega.abs() < limit) {
            return Err(KamError::EmptyCrown { omega: to_f64(self.omega.abs()), limit: to_f64(limit) });
        }
        Ok(())
    }
}

/// `‖f‖_{ω,β,r} = Σ_{lj=0} |f_{l,j}|_{ω,β} r^{l+j}` with the disk sup sampled on its boundary circle.
pub fn crown_norm<F: Real>(f: &CrownSeries<F>, np: &CrownNormParams<F>) -> Result<F> {
    np.validate()?;
    Ok(crown_norm_unchecked(f, np.omega, np.beta, np.radius, np.boundary_samples))
}

/// Evaluates the defining sum of [`crown_norm`] without the emptiness check on `(ω, β, r)`.
pub fn crown_norm_raw<F: Real>(f: &CrownSeries<F>, np: &CrownNormParams<F>) -> F {
    crown_norm_unchecked(f, np.omega, np.beta, np.radius, np.boundary_samples)
}

pub(crate) fn crown_norm_unchecked<F: Real>(f: &CrownSeries<F>, omega: F, beta: F, r: F, ns: usize) -> F {
    let mut total = F::zero();
    for e in f.crown_decompose() {
        if e.series.is_zero() {
            continue;
        }
        let rp = r.powi((e.l + e.j) as i32);
        total += e.series.sup_on_circle(omega, beta, ns) * rp;
    }
    total
}

/// `|f_{l,j}|_{ω,β}` for every crown index, as `(l, j, value)`.
pub fn crown_coefficient_norms<F: Real>(f: &CrownSeries<F>, np: &CrownNormParams<F>) -> Result<Vec<(usize, usize, F)>> {
    np.validate()?;
    Ok(f
        .crown_decompose()
        .into_iter()
        .map(|e| (e.l, e.j, e.series.sup_on_circle(np.omega, np.beta, np.boundary_samples)))
        .collect())
}

/// Finite sample of a parameter set `O` together with `(β, r)`; norms are sups over the samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct CrownDomain<F> {
    pub omegas: Vec<F>,
    pub beta: F,
    pub radius: F,
    pub boundary_samples: usize,
}

impl<F: Real> CrownDomain<F> {
    pub fn new(omegas: Vec<F>, beta: F, radius: F) -> Self {
        Self { omegas, beta, radius, boundary_samples: DEFAULT_BOUNDARY_SAMPLES }
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.boundary_samples = n;
        self
    }

    pub fn at(&self, beta: F, radius: F) -> Self {
        Self { omegas: self.omegas.clone(), beta, radius, boundary_samples: self.boundary_samples }
    }

    pub fn params(&self, omega: F) -> CrownNormParams<F> {
        CrownNormParams { omega, beta: self.beta, radius: self.radius, boundary_samples: self.boundary_samples }
    }

    pub fn validate(&self) -> Result<()> {
        if self.omegas.is_empty() {
            return Err(KamError::EmptyParameterSet);
        }
        self.omegas.iter().try_for_each(|w| self.params(*w).validate())
    }

    /// `‖f‖_{O,β,r}`.
    pub fn norm(&self, f: &CrownSeries<F>) -> Result<F> {
        self.validate()?;
        Ok(self.norm_unchecked(f))
    }

    pub(crate) fn norm_unchecked(&self, f: &CrownSeries<F>) -> F {
        self.omegas
            .iter()
            .fold(F::zero(), |m, w| m.max(crown_norm_unchecked(f, *w, self.beta, self.radius, self.boundary_samples)))
    }

    /// `max(‖f‖, ‖g‖)`.
    pub fn norm_pair(&self, f: &CrownSeries<F>, g: &CrownSeries<F>) -> Result<F> {
        Ok(self.norm(f)?.max(self.norm(g)?))
    }
}
