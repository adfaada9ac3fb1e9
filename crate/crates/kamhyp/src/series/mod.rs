//! Truncated power series in one variable `z` and two variables `(ξ, η)`.
//!
//! Bivariate series are stored densely in graded-lexicographic order
//! (`1, ξ, η, ξ², ξη, η², …`); the crown decomposition
//! `f = Σ_{lj=0} f_{l,j}(ξη) ξ^l η^j` is derived on demand. JSON encodes
//! every complex coefficient as a `[re, im]` pair.

mod coeff;
mod compose;
mod crown;
mod norm;

pub use coeff::CoeffSeries;
pub use compose::{
    compose, compose_rotated, compose_univariate, exp_series, exp_series_tol, inverse_residual, invert_near_identity,
    rotation_factor, InverseGate, InverseOptions, SeriesMap, DEFAULT_EXP_TAIL_TOL, DEFAULT_INVERSE_TOL,
    DEFAULT_MAX_INVERSE_ITERS,
};
pub use crown::{crown_product, graded_index, graded_len, multiply, CrownEntry, CrownSeries};
pub use norm::{crown_coefficient_norms, crown_norm, crown_norm_raw, CrownDomain, CrownNormParams, DEFAULT_BOUNDARY_SAMPLES};

/// Crown decomposition of `f` (free-function form of [`CrownSeries::crown_decompose`]).
pub fn crown_decompose<F: crate::Real>(f: &CrownSeries<F>) -> Vec<CrownEntry<F>> {
    f.crown_decompose()
}
