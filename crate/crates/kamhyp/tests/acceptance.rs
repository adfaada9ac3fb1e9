//! Acceptance criteria 1 to 10. Run with `cargo test -p kamhyp --test acceptance -- --nocapture`
//! to see one PASS/FAIL line per criterion.

mod common;

use std::fs;
use std::time::Instant;

use common::*;
use kamhyp::kamstep::{main_step, PRACTICAL_PQ_EXPONENT, PRACTICAL_SKEW_EXPONENT};
use kamhyp::moserwebster::{deck_residual, deck_transformation, BishopSurface, Monomial};
use kamhyp::runner::*;
use kamhyp::series::*;
use kamhyp::sieve::{pyartli_bound, sublevel_measure};
use kamhyp::{CoeffSeries64, CrownSeries64};
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u32, label: &str, pass: bool, detail: String, t0: Instant) {
    println!(
        "criterion {n:>2} {label:<28} {}  {detail}  ({:.2}s)",
        if pass { "PASS" } else { "FAIL" },
        t0.elapsed().as_secs_f64()
    );
    assert!(pass, "criterion {n} ({label}) failed: {detail}");
}

fn random_crown(rng: &mut ChaCha8Rng, degree: usize, scale: f64) -> CrownSeries64 {
    CrownSeries::from_fn(degree, |_, _| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale)
}

fn naive_product(f: &CrownSeries64, g: &CrownSeries64) -> CrownSeries64 {
    let d = f.degree();
    let mut out = CrownSeries::zeros(d);
    for (m1, n1, a) in f.terms() {
        for (m2, n2, b) in g.terms() {
            if m1 + m2 + n1 + n2 <= d {
                out.add_to(m1 + m2, n1 + n2, a * b);
            }
        }
    }
    out
}

fn random_params(rng: &mut ChaCha8Rng) -> CrownNormParams<f64> {
    let r = rng.gen_range(0.05..0.3);
    let beta = rng.gen_range(0.0..0.9) * r * r * 0.5;
    let omega = rng.gen_range(-0.9..0.9) * (r * r - beta);
    CrownNormParams::new(omega, beta, r)
}

#[test]
fn criterion_01_algebraic_core() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut roundtrip = true;
    for _ in 0..200 {
        let d = rng.gen_range(1..=10);
        let f = random_crown(&mut rng, d, 1.0);
        let g = random_crown(&mut rng, d, 1.0);
        let direct = naive_product(&f, &g);
        let crown = crown_product(&f, &g).unwrap();
        worst = worst.max((&crown - &direct).max_abs() / direct.max_abs().max(1.0));
        roundtrip &= CrownSeries::from_crown(&f.crown_decompose(), d) == f;
    }
    let pass = worst <= 1e-13 && roundtrip && t0.elapsed().as_secs_f64() < 5.0;
    verdict(1, "product formula", pass, format!("max rel err {worst:.2e}, round-trip {roundtrip}"), t0);
}

#[test]
fn criterion_02_norm_calculus() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut violations = 0;
    for _ in 0..100 {
        let np = random_params(&mut rng);
        let f = random_crown(&mut rng, 8, 1.0);
        let g = random_crown(&mut rng, 8, 1.0);
        let lhs = crown_norm(&(&f * &g), &np).unwrap();
        let rhs = crown_norm(&f, &np).unwrap() * crown_norm(&g, &np).unwrap();
        violations += (lhs > rhs * (1.0 + 1e-12) + 1e-12) as usize;
    }
    let mut checked = 0;
    while checked < 100 {
        let outer = random_params(&mut rng);
        let r2 = outer.radius * rng.gen_range(0.5..1.0);
        let b2 = (outer.beta * rng.gen_range(0.0..1.0)).max(r2 * r2 - (outer.radius.powi(2) - outer.beta)).min(outer.beta);
        if r2 * r2 <= b2 {
            continue;
        }
        checked += 1;
        let w2 = rng.gen_range(-0.9..0.9) * (r2 * r2 - b2);
        let outer = CrownNormParams::new(w2, outer.beta, outer.radius);
        let inner = CrownNormParams::new(w2, b2, r2);
        let f = random_crown(&mut rng, 8, 1.0);
        let big = crown_norm(&f, &outer).unwrap();
        let small = crown_norm(&f, &inner).unwrap();
        violations += (small > big * (1.0 + 1e-12) + 1e-12) as usize;
    }
    for _ in 0..100 {
        let np = random_params(&mut rng);
        let f = random_crown(&mut rng, 8, 1.0);
        let n = crown_norm(&f, &np).unwrap();
        let nc = crown_norm(&f.conjugate(), &np).unwrap();
        let ns = crown_norm(&f.swap_vars(), &np).unwrap();
        violations += ((n - nc).abs() > 1e-12 * n.max(1.0) || (n - ns).abs() > 1e-12 * n.max(1.0)) as usize;
    }
    let pass = violations == 0 && t0.elapsed().as_secs_f64() < 10.0;
    verdict(2, "norm calculus", pass, format!("{violations} violations in 300 instances"), t0);
}

#[test]
fn criterion_03_composition_lipschitz() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (rp, rpp, bp) = (0.2, 0.15, 0.01);
    let omegas = vec![-0.01, 0.0, 0.01];
    let outer = CrownDomain::new(omegas.clone(), bp, rp);
    let inner = CrownDomain::new(omegas, bp / 2.0, rpp);
    let cap = bp * bp / 16.0;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let small = |rng: &mut ChaCha8Rng| {
            let f = random_crown(rng, 8, 1.0);
            let n = inner.norm(&f).unwrap();
            f.scale_real(rng.gen_range(0.05..0.95) * cap / n)
        };
        let (f1, f2, g1, g2) = (small(&mut rng), small(&mut rng), small(&mut rng), small(&mut rng));
        let h = random_crown(&mut rng, 8, 1.0);
        let b = rng.gen_range(-1.0..1.0);
        let alpha = CoeffSeries64::from_real(4, &[rng.gen_range(0.3..6.0), 1.0]);
        let a = compose_rotated(&h, b, &alpha, &f1, &g1).unwrap();
        let bb = compose_rotated(&h, b, &alpha, &f2, &g2).unwrap();
        let lhs = inner.norm(&(&a - &bb)).unwrap();
        let diff = inner.norm(&(&f1 - &f2)).unwrap().max(inner.norm(&(&g1 - &g2)).unwrap());
        let rhs = 3.0 * rp * outer.norm(&h).unwrap() / ((rp - rpp) * bp) * diff;
        worst = worst.max(lhs / rhs);
    }
    let pass = worst < 1.0 && t0.elapsed().as_secs_f64() < 30.0;
    verdict(3, "composition Lipschitz", pass, format!("max measured/bound {worst:.3e}"), t0);
}

#[test]
fn criterion_04_deck_identity() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut quad: f64 = 0.0;
    for _ in 0..10 {
        let g: f64 = rng.gen_range(0.51..4.0);
        let q = |z: C, w: C| z * w + (z * z + w * w) * g;
        for _ in 0..8 {
            let z = C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let w = C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let v = q(z, w);
            quad = quad.max((q(z, -z / g - w) - v).norm() / v.norm().max(1.0));
        }
        let m = BishopSurface::quadric(g, 8).unwrap();
        quad = quad.max(deck_residual(&m, &deck_transformation(&m).unwrap()).unwrap());
    }
    let mut pert: f64 = 0.0;
    for _ in 0..5 {
        let g = rng.gen_range(0.55..3.0);
        let terms: Vec<Monomial> = [(3, 0), (2, 1), (1, 2), (0, 3)]
            .iter()
            .map(|&(m, n)| Monomial { m, n, re: rng.gen_range(-1.0..1.0), im: 0.0 })
            .collect();
        let m = BishopSurface::from_monomials(g, 8, &terms).unwrap();
        pert = pert.max(deck_residual(&m, &deck_transformation(&m).unwrap()).unwrap());
    }
    let pass = quad <= 1e-14 && pert <= 1e-11 && t0.elapsed().as_secs_f64() < 5.0;
    verdict(4, "deck identity", pass, format!("quadric {quad:.2e}, perturbed {pert:.2e}"), t0);
}

const DESK_CASES: [(u64, f64); 5] = [(1, 1e-3), (2, 1e-4), (3, 1e-5), (4, 3e-4), (5, 3e-5)];

#[test]
fn criterion_05_cohomological_solver() {
    let t0 = Instant::now();
    let mut failed = Vec::new();
    let mut worst: f64 = 0.0;
    for (seed, eps) in DESK_CASES {
        let t = desk_instance(seed, eps);
        let geom = desk_geometry(&t);
        let measured = t.measured_eps(&desk_domain()).unwrap();
        if !(1e-5 * 0.99..=1e-3 * 1.01).contains(&measured) || geom.k_index(t.degree()) > 12 {
            failed.push(format!("seed {seed}: setup"));
        }
        let out = main_step(&t, &geom, &desk_omegas()).unwrap();
        for name in ["cohomo1", "cohomo2", "esti_Luv"] {
            let ch = out.report.check(name).unwrap();
            worst = worst.max(ch.measured / ch.bound);
            if !ch.pass {
                failed.push(format!("seed {seed}: {name}"));
            }
        }
    }
    let pass = failed.is_empty() && t0.elapsed().as_secs_f64() < 120.0;
    verdict(5, "cohomological solver", pass, format!("max measured/bound {worst:.3e} {failed:?}"), t0);
}

#[test]
fn criterion_06_main_step_contraction() {
    let t0 = Instant::now();
    let mut pq_ratio: f64 = 0.0;
    let mut skew_ratio: f64 = 0.0;
    for (seed, eps) in DESK_CASES {
        let t = desk_instance(seed, eps);
        let r = main_step(&t, &desk_geometry(&t), &desk_omegas()).unwrap().report;
        pq_ratio = pq_ratio.max((r.p_plus_norm + r.q_plus_norm) / r.eps.powf(PRACTICAL_PQ_EXPONENT));
        skew_ratio = skew_ratio.max(r.skew_plus_norm / r.eps.powf(PRACTICAL_SKEW_EXPONENT));
        for name in ["esti_p_plus_q_plus_p", "esti_p_plus_q_plus_q", "esti_Lp_plus_q_plus"] {
            let ch = r.check(name).unwrap();
            println!("  seed {seed} verbatim {name}: {:.3e} vs {:.3e}", ch.measured, ch.bound);
        }
    }
    let pass = pq_ratio <= 1.0 && skew_ratio <= 1.0 && t0.elapsed().as_secs_f64() < 120.0;
    verdict(6, "main-step contraction", pass, format!("pq/eps^1.15 {pq_ratio:.3e}, skew/eps^1.4 {skew_ratio:.3e}"), t0);
}

fn cubic_run() -> KamState {
    let cfg = RunConfig::fixture("cubic").unwrap();
    let (st, _) = prepare(&cfg).unwrap();
    iterate(st, 3).unwrap()
}

#[test]
fn criterion_07_three_round_superlinearity() {
    let t0 = Instant::now();
    let st = cubic_run();
    let logs: Vec<f64> = st.eps.iter().map(|e| e.ln()).collect();
    let ratios: Vec<f64> = logs.windows(2).map(|w| w[1] / w[0]).collect();
    let convex = logs.windows(3).all(|w| w[2] - w[1] < w[1] - w[0]);
    let pass = st.nu == 3
        && logs.windows(2).all(|w| w[1] < w[0])
        && ratios.iter().all(|r| *r >= 1.1)
        && convex
        && t0.elapsed().as_secs_f64() < 600.0;
    verdict(7, "three-round superlinearity", pass, format!("eps {:?}, log ratios {ratios:.3?}", st.eps.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>()), t0);
}

#[test]
fn criterion_08_end_to_end_conjugacy() {
    let t0 = Instant::now();
    let st = cubic_run();
    let lam = st.original.lambda();
    let omegas = default_omegas(&st, &OmegaSpec::default());
    let (res, _) = curves(&st, &omegas, 64).unwrap();
    let good: Vec<&CurveResult> = res
        .iter()
        .filter(|c| {
            c.conjugacy_residual <= 1e-7
                && c.equivariance_residual <= 1e-9
                && (c.mu_omega - lam).abs() < std::f64::consts::FRAC_PI_4
        })
        .collect();
    let worst = res.iter().map(|c| c.conjugacy_residual).fold(0.0, f64::max);
    let pass = good.len() >= 5 && t0.elapsed().as_secs_f64() < 300.0;
    verdict(8, "end-to-end conjugacy", pass, format!("{} of {} curves good, max residual {worst:.2e}", good.len(), res.len()), t0);
}

#[test]
fn criterion_09_sieve_soundness() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let q: u32 = rng.gen_range(1..4);
        let delta: f64 = rng.gen_range(0.1..3.0);
        let a: f64 = rng.gen_range(1e-4..0.5);
        let lower: Vec<f64> = (0..q).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fact: f64 = (1..=q).map(|k| k as f64).product();
        let f = |t: f64| delta * t.powi(q as i32) / fact + lower.iter().enumerate().map(|(j, c)| c * t.powi(j as i32)).sum::<f64>();
        let measured = sublevel_measure(f, 0.0, 1.0, a, 1e-5);
        // one grid cell of slack at each end: the q = 1 bound is sharp
        worst = worst.max(measured - pyartli_bound(q, delta, a) - 2e-5);
    }
    let st = cubic_run();
    let mut rounds = Vec::new();
    let mut mes_ok = true;
    for r in &st.rounds {
        let e = &r.exclusion;
        if e.informative {
            mes_ok &= e.measured <= e.bound_mes;
            rounds.push(format!("nu {}: {:.2e} <= {:.2e}", r.nu, e.measured, e.bound_mes));
        } else {
            rounds.push(format!("nu {}: vacuous (bound {:.2e})", r.nu, e.bound_mes));
        }
    }
    let pass = worst <= 0.0 && mes_ok && t0.elapsed().as_secs_f64() < 60.0;
    verdict(9, "sieve soundness", pass, format!("pyartli max excess {worst:.2e}; {}", rounds.join(", ")), t0);
}

#[test]
fn criterion_10_determinism() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    let mut codes = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let args = ["kamhyp", "verify", "--seed-fixture", "cubic", "--out", out.to_str().unwrap()];
        codes.push(run_cli(args));
        reports.push(fs::read(out.join("run_report.json")).unwrap());
    }
    let pass = codes == [EXIT_OK, EXIT_OK] && reports[0] == reports[1];
    verdict(10, "determinism", pass, format!("exit codes {codes:?}, {} bytes", reports[0].len()), t0);
}
