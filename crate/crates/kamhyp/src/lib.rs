//! Truncated power-series engine and KAM-type iteration for pairs of
//! holomorphic involutions near an elliptic fixed point of C², used to
//! locate invariant holomorphic hyperbolas `{ξη = ω}` of perturbed
//! hyperbolic Bishop quadrics.

pub mod error;
pub mod involution;
pub mod kamstep;
pub mod moserwebster;
pub mod prenormal;
pub mod scalar;
pub mod series;
pub mod runner;
pub mod sieve;

pub use error::{KamError, Result};
pub use scalar::Real;

pub type Complex64 = num_complex::Complex<f64>;
pub type CoeffSeries64 = series::CoeffSeries<f64>;
pub type CrownSeries64 = series::CrownSeries<f64>;
pub type SeriesMap64 = series::SeriesMap<f64>;
pub type CoeffSeries32 = series::CoeffSeries<f32>;
pub type CrownSeries32 = series::CrownSeries<f32>;
pub type InvolutionPair64 = involution::InvolutionPair<f64>;
pub type InvolutionPair32 = involution::InvolutionPair<f32>;
pub type IntervalSet64 = sieve::IntervalSet<f64>;
pub type IntervalSet32 = sieve::IntervalSet<f32>;
