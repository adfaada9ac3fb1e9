#![allow(dead_code)]

use kamhyp::involution::*;
use kamhyp::kamstep::{step_eps, StepGeometry};
use kamhyp::series::*;
use kamhyp::{CoeffSeries64, CrownSeries64, InvolutionPair64};
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DESK_DEGREE: usize = 12;
pub const DESK_R: f64 = 0.2;
pub const DESK_R_PLUS: f64 = 0.15;
pub const DESK_BETA: f64 = 0.005;

/// `√2 − 1`: every divisor `|e^{inλ} − 1|` with `n ≤ 13` stays above 0.38 near `ω = 0`.
pub fn desk_lambda() -> f64 {
    2f64.sqrt() - 1.0
}

pub fn desk_alpha(degree: usize) -> CoeffSeries64 {
    CoeffSeries::from_real(degree / 2, &[desk_lambda(), 1.0])
}

pub fn desk_omegas() -> Vec<f64> {
    vec![-0.02, -0.01, 0.0, 0.01, 0.02]
}

pub fn desk_domain() -> CrownDomain<f64> {
    CrownDomain::new(desk_omegas(), DESK_BETA, DESK_R)
}

pub fn random_poly(rng: &mut ChaCha8Rng, degree: usize, lo: usize, hi: usize) -> CrownSeries64 {
    CrownSeries::from_fn(degree, |m, n| {
        if (lo..=hi).contains(&(m + n)) {
            C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        } else {
            C::new(0.0, 0.0)
        }
    })
}

/// Product-preserving involution (skew of order ε²) with measured ε equal to `eps`.
pub fn desk_instance(seed: u64, eps: f64) -> InvolutionPair64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = random_poly(&mut rng, DESK_DEGREE, 1, 4);
    let alpha = desk_alpha(DESK_DEGREE);
    let build = |k: f64| product_preserving_involution(&alpha, &raw.scale_real(k), 1).unwrap();
    let mut k = 1e-3;
    for _ in 0..4 {
        let e0 = build(k).measured_eps(&desk_domain()).unwrap();
        k *= eps / e0;
    }
    build(k)
}

pub fn desk_geometry(t: &InvolutionPair64) -> StepGeometry {
    let eps = step_eps(t, &desk_domain()).unwrap();
    StepGeometry::practical(eps, 1, DESK_R, DESK_R_PLUS, DESK_BETA, &t.alpha, &desk_omegas(), t.degree()).unwrap()
}

/// Involution whose `p` is a random seed; its skew term is of the same order as `p`.
pub fn generic_instance(seed: u64, eps: f64) -> InvolutionPair64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = random_poly(&mut rng, DESK_DEGREE, 2, 4);
    let alpha = desk_alpha(DESK_DEGREE);
    let build = |k: f64| involution_from_seed(&alpha, &raw.scale_real(k), 1, 40).unwrap();
    let mut k = 1e-3;
    for _ in 0..4 {
        let e0 = build(k).measured_eps(&desk_domain()).unwrap();
        k *= eps / e0;
    }
    build(k)
}
