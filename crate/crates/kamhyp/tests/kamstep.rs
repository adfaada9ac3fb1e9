mod common;

use common::*;
use kamhyp::involution::*;
use kamhyp::kamstep::*;
use kamhyp::moserwebster::PointTransform;
use kamhyp::series::*;
use kamhyp::{CoeffSeries64, CrownSeries64, InvolutionPair64};
use num_complex::Complex64 as C;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

fn run(t: &InvolutionPair64) -> StepOutcome {
    main_step(t, &desk_geometry(t), &desk_omegas()).unwrap()
}

fn check<'a>(r: &'a StepReport, name: &str) -> &'a BoundCheck {
    r.check(name).unwrap_or_else(|| panic!("missing check {name}"))
}

#[test]
fn geometry_radii_and_k() {
    let t = desk_instance(1, 1e-4);
    let g = desk_geometry(&t);
    assert!((g.r_m(0) - g.r_plus).abs() < 1e-15 && (g.r_m(8) - g.r).abs() < 1e-15);
    assert!((g.r_tilde() - 0.5 * (g.r + g.r_plus)).abs() < 1e-15);
    let k = g.eps.ln().abs() / (g.r7() / g.r).ln().abs();
    assert!((g.k - k).abs() < 1e-12);
    assert!(g.beta_plus < g.beta_tilde && g.beta_tilde < g.beta);
    assert!((g.beta_plus - g.beta.powf(1.25)).abs() < 1e-18);
    assert_eq!(g.k_index(12), 12);
}

#[test]
fn practical_delta_is_fraction_of_smallest_divisor() {
    let t = desk_instance(1, 1e-4);
    let g = desk_geometry(&t);
    let mut brute = f64::INFINITY;
    for w in desk_omegas() {
        let a = desk_lambda() + w;
        for n in 1..=13 {
            brute = brute.min((c(0.0, n as f64 * a).exp() - 1.0).norm());
        }
    }
    assert!((g.delta - 0.9 * brute).abs() < 1e-12);
    assert_eq!(divisor_filter(&t.alpha, &desk_omegas(), 13, g.delta).len(), desk_omegas().len());
}

#[test]
fn rigorous_geometry_reports_empty_divisor_interval() {
    // 80 ε^{1/60} ≥ 1 at any desk-scale ε
    let err = StepGeometry::rigorous(1e-4, 1, 0.2, 0.15).unwrap_err();
    assert!(matches!(err, kamhyp::KamError::Structural(_)));
}

#[test]
fn smallness_condition_is_violated_at_desk_scale() {
    let g = desk_geometry(&desk_instance(1, 1e-4));
    let s = g.smallness();
    assert!(!s.pass && s.measured > 1e20);
}

#[test]
fn truncation_without_tail() {
    let p = CrownSeries::from_fn(8, |m, n| if m.abs_diff(n) <= 3 { c(0.1, 0.0) } else { c(0.0, 0.0) });
    let dom = CrownDomain::new(vec![0.0], 0.01, 0.3);
    let tr = truncate_k(&p, &p, 3.5, &dom).unwrap();
    assert_eq!(tr.k_index, 3);
    assert_eq!(tr.tail(), 0.0);
    assert_eq!(tr.p_k, p);
}

#[test]
fn truncation_of_single_high_monomial() {
    let k = 3.7;
    let r7 = 0.3;
    let p = CrownSeries64::monomial(4, 0, c(1.0, 0.0), 8);
    let dom = CrownDomain::new(vec![0.0], 0.01, r7);
    let tr = truncate_k(&p, &CrownSeries::zeros(8), k, &dom).unwrap();
    assert!(tr.p_k.is_zero());
    assert!((tr.tail_p - r7.powi(4)).abs() < 1e-15);
}

#[test]
fn truncation_tail_is_geometrically_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = random_poly(&mut rng, 12, 0, 12);
    let (r, r7, k) = (0.3, 0.25, 4.0);
    let outer = CrownDomain::new(vec![-0.01, 0.02], 0.01, r);
    let inner = outer.at(0.01, r7);
    let tr = truncate_k(&p, &p, k, &inner).unwrap();
    let bound = outer.norm(&p).unwrap() * (r7 / r).powf(k);
    assert!(tr.tail_p > 0.0 && tr.tail_p <= bound, "{} vs {bound}", tr.tail_p);
}

#[test]
fn truncation_rejects_small_k() {
    let p = CrownSeries64::zeros(4);
    let dom = CrownDomain::new(vec![0.0], 0.01, 0.3);
    assert!(truncate_k(&p, &p, 0.5, &dom).is_err());
}

#[test]
fn solver_on_linear_pair_is_zero() {
    let t = InvolutionPair::linear(desk_alpha(DESK_DEGREE), DESK_DEGREE, 1);
    let g = desk_geometry(&desk_instance(1, 1e-4));
    let sigma = compose_sigma(&t).unwrap();
    let (u, v) = solve_cohomological(&t, &sigma, &g, &desk_omegas()).unwrap();
    assert!(u.is_zero() && v.is_zero());
}

#[test]
fn solver_rejects_stale_sigma() {
    let t = desk_instance(1, 1e-4);
    let other = desk_instance(2, 1e-4);
    let g = desk_geometry(&t);
    let sigma = compose_sigma(&other).unwrap();
    assert!(solve_cohomological(&t, &sigma, &g, &desk_omegas()).is_err());
}

#[test]
fn solver_output_is_real_with_zero_resonant_slots() {
    let t = desk_instance(3, 1e-4);
    let g = desk_geometry(&t);
    let (u, v) = solve_cohomological(&t, &compose_sigma(&t).unwrap(), &g, &desk_omegas()).unwrap();
    assert_eq!(u.max_imag(), 0.0);
    assert_eq!(v.max_imag(), 0.0);
    assert!(u.crown_coeff(1, 0).is_zero());
    assert!(v.crown_coeff(0, 1).is_zero());
    assert!(!u.is_zero() && !v.is_zero());
}

#[test]
fn solver_coefficient_matches_divisor_formula() {
    // oracle: the (2,0) coefficient evaluated pointwise at z = ω from σ's f
    let t = desk_instance(4, 1e-4);
    let g = desk_geometry(&t);
    let sigma = compose_sigma(&t).unwrap();
    let (u, _) = solve_cohomological(&t, &sigma, &g, &desk_omegas()).unwrap();
    let f20 = sigma.f.crown_coeff(2, 0);
    for z in [0.0, 0.004, -0.007] {
        let a = t.alpha.eval_re(z);
        let fz = f20.eval(c(z, 0.0));
        let fbar = f20.conj().eval(c(z, 0.0));
        let expect = 0.5 * (fz - c(0.0, 3.0 * a).exp() * fbar) / (c(0.0, 2.0 * a).exp() - c(0.0, a).exp());
        let got = u.crown_coeff(2, 0).eval(c(z, 0.0));
        assert!((got - expect).norm() < 1e-12 * (1.0 + expect.norm()), "{got} vs {expect}");
    }
}

#[test]
fn divisor_check_on_resonant_rotation_fails() {
    let alpha = CoeffSeries64::from_real(6, &[2.0 * PI / 3.0, 1.0]);
    let err = check_divisors_on_disks(&alpha, &[0.0], 0.001, 4, 0.1).unwrap_err();
    assert!(matches!(err, kamhyp::KamError::SmallDivisor { n, .. } if n.abs() == 3));
}

#[test]
fn cohomological_residuals_within_bounds() {
    for (seed, eps) in [(1, 1e-3), (2, 1e-4), (3, 1e-5)] {
        let out = run(&desk_instance(seed, eps));
        for name in ["cohomo1", "cohomo2", "esti_Luv"] {
            let ch = check(&out.report, name);
            assert!(ch.pass, "{name}: {} vs {}", ch.measured, ch.bound);
        }
    }
}

#[test]
fn conjugation_by_identity_on_linear_pair() {
    let t = InvolutionPair::linear(desk_alpha(DESK_DEGREE), DESK_DEGREE, 1);
    let g = desk_geometry(&desk_instance(1, 1e-4));
    let z = CrownSeries::zeros(DESK_DEGREE);
    let cj = conjugate_step(&t, (&z, &z), &g, &desk_omegas(), 0.0).unwrap();
    assert_eq!(cj.tau.sub(&t.tau1().unwrap()).max_abs(), 0.0);
    assert!(cj.a.max_abs() < 1e-15 && cj.p.max_abs() < 1e-15 && cj.q.max_abs() < 1e-15);
}

#[test]
fn conjugation_contracts_and_stays_in_crown() {
    let t = desk_instance(5, 1e-4);
    let g = desk_geometry(&t);
    let om = desk_omegas();
    let (u, v) = solve_cohomological(&t, &compose_sigma(&t).unwrap(), &g, &om).unwrap();
    let dom = desk_domain();
    let skew = dom.norm(&skew_term(&t).unwrap()).unwrap();
    let cj = conjugate_step(&t, (&u, &v), &g, &om, skew).unwrap();
    let old = dom.norm(&t.p).unwrap();
    let new = g.domain(&om, g.beta_plus, g.r_plus).unwrap().norm(&cj.p).unwrap();
    assert!(new < old, "{new} vs {old}");
    let ratio = crown_containment(&cj.phi, &om, (g.beta_plus, g.r_plus), (g.beta, g.r), 8).unwrap();
    assert!(ratio < 1.0);
    // the intermediate is still an involution
    let tt = cj.tau.compose(&cj.tau).minus_identity();
    assert!(tt.max_abs() < 1e-12);
}

#[test]
fn containment_detects_escape() {
    let big = SeriesMap::new(CrownSeries::xi(4).scale_real(3.0), CrownSeries::eta(4));
    let ratio = crown_containment(&big, &[0.0], (0.001, 0.1), (0.01, 0.2), 8).unwrap();
    assert!(ratio > 1.0);
}

fn principal_only(alpha: &CoeffSeries64, a: &CoeffSeries64, d: usize) -> Conjugated {
    let e = alpha.cis_series(0.5).unwrap();
    let pr = &e + a;
    let tau = SeriesMap::new(
        CrownSeries::lift(&pr, d).mul_eta(),
        CrownSeries::lift(&pr.recip().unwrap(), d).mul_xi(),
    );
    Conjugated {
        alpha: alpha.clone(),
        s_order: 1,
        tau,
        a: a.clone(),
        p: CrownSeries::zeros(d),
        q: CrownSeries::zeros(d),
        phi: SeriesMap::identity(d),
        checks: vec![],
    }
}

#[test]
fn theta_scaling_with_zero_principal_correction() {
    let d = DESK_DEGREE;
    let alpha = desk_alpha(d);
    let g = desk_geometry(&desk_instance(1, 1e-4));
    let sc = theta_scaling(&principal_only(&alpha, &CoeffSeries::zeros(d / 2), d), &g, &desk_omegas()).unwrap();
    assert!((&sc.theta - &CoeffSeries::one(d / 2)).max_abs() < 1e-15);
    assert!((&sc.pair.alpha - &alpha).max_abs() < 1e-15);
    assert!(sc.pair.p.max_abs() < 1e-15 && sc.pair.q.max_abs() < 1e-15);
}

#[test]
fn theta_scaling_constant_shift_example() {
    let d = 8;
    let lambda = 2.0 * PI / 3.0;
    let cst = 0.01;
    let alpha = CoeffSeries64::from_real(d / 2, &[lambda]);
    let a = CoeffSeries::constant(c(cst, 0.0), d / 2);
    let g = desk_geometry(&desk_instance(1, 1e-4));
    let sc = theta_scaling(&principal_only(&alpha, &a, d), &g, &[0.0]).unwrap();
    let shift = sc.pair.alpha.coeff(0).re - lambda;
    let oracle = -2.0 * cst * (lambda / 2.0).sin();
    assert!((shift - oracle).abs() < 1e-15);
    assert!((shift + 0.0173205).abs() < 1e-7);
    // the linear update leaves only a second-order remainder in the principal slot
    assert!(sc.pair.p.max_abs() < 2.0 * cst * cst);
}

#[test]
fn theta_powers_obey_lambda_bound() {
    let d = 8;
    let alpha = CoeffSeries64::from_real(d / 2, &[1.3, 1.0]);
    let a = CoeffSeries::from_coeffs(vec![c(0.004, 0.002), c(-0.01, 0.003), c(0.02, 0.0)]).with_dz(d / 2);
    let g = desk_geometry(&desk_instance(1, 1e-4));
    let sc = theta_scaling(&principal_only(&alpha, &a, d), &g, &desk_omegas()).unwrap();
    let anorm = coeff_norm(&a, &desk_omegas(), g.beta_plus, 64);
    for k in [1.0, -1.0] {
        let th = sc.theta.powf(k).unwrap();
        let m = coeff_norm(&(&th - &CoeffSeries::one(d / 2)), &desk_omegas(), g.beta_plus, 64);
        assert!(m <= 0.75 * anorm, "k = {k}: {m} vs {anorm}");
    }
    for ch in &sc.checks {
        assert!(ch.pass, "{}: {} vs {}", ch.name, ch.measured, ch.bound);
    }
}

#[test]
fn theta_scaling_preserves_product() {
    let d = DESK_DEGREE;
    let th = CoeffSeries64::from_real(d / 2, &[1.01, -0.3, 0.2]);
    let s = product_scaling(&th, d).unwrap();
    let prod = &s.x * &s.y;
    let xe = &CrownSeries::xi(d) * &CrownSeries::eta(d);
    assert!((&prod - &xe).max_abs() < 1e-15);
}

#[test]
fn theta_root_rejects_branch_cut() {
    let alpha = CoeffSeries64::from_real(2, &[0.0]);
    let a = CoeffSeries::constant(c(-1.0, 0.0), 2);
    assert!(matches!(theta_root(&alpha, &a), Err(kamhyp::KamError::BranchCut(_))));
}

#[test]
fn main_step_on_linear_pair_is_identity() {
    let t = InvolutionPair::linear(desk_alpha(DESK_DEGREE), DESK_DEGREE, 1);
    let g = desk_geometry(&desk_instance(1, 1e-4));
    let out = main_step(&t, &g, &desk_omegas()).unwrap();
    assert!(out.psi.minus_identity().max_abs() < 1e-15);
    assert!(out.pair.p.max_abs() < 1e-15);
    assert!(out.pair.q.max_abs() < 1e-15);
    assert!((&out.pair.alpha - &t.alpha).max_abs() < 1e-15);
}

#[test]
fn main_step_contracts_desk_instances() {
    for (seed, eps) in [(1, 1e-3), (2, 1e-4), (3, 1e-5), (6, 3e-4)] {
        let out = run(&desk_instance(seed, eps));
        let r = &out.report;
        assert!(r.practical_pass(), "{:?}", r.practical.iter().filter(|c| !c.pass).collect::<Vec<_>>());
        assert!(r.p_plus_norm + r.q_plus_norm <= r.eps.powf(1.15));
        assert!(r.skew_plus_norm <= r.eps.powf(1.4));
        for name in ["esti_p_plus_q_plus_p", "esti_p_plus_q_plus_q", "esti_Lp_plus_q_plus"] {
            assert!(check(r, name).pass, "{name}");
        }
    }
}

#[test]
fn skew_becomes_superlinearly_small() {
    for (seed, eps) in [(11, 1e-4), (12, 1e-4), (13, 3e-4)] {
        let t = generic_instance(seed, eps);
        let r = run(&t).report;
        assert!(r.skew_plus_norm < r.skew_norm.powf(1.2), "{} vs {}", r.skew_plus_norm, r.skew_norm);
    }
}

#[test]
fn alpha_derivative_bounds_with_cauchy_factor() {
    let r = run(&desk_instance(2, 1e-4)).report;
    assert_eq!(r.alpha_diff.len(), 17);
    assert!(check(&r, "error_alpha[k=0]").pass);
    assert!(check(&r, "error_alpha[k=1]").pass);
    for k in 0..=16 {
        let ch = check(&r, &format!("error_alpha_scaled[k={k}]"));
        assert!(ch.pass, "k = {k}: {} vs {}", ch.measured, ch.bound);
    }
    // derivatives beyond the coefficient degree vanish
    assert_eq!(r.alpha_diff[16], 0.0);
}

#[test]
fn output_is_involution_and_psi_is_real() {
    let out = run(&desk_instance(8, 3e-4));
    let tau = out.pair.tau1().unwrap();
    assert!(tau.compose(&tau).minus_identity().max_abs() < 1e-12);
    assert_eq!(out.psi.max_imag(), 0.0);
    assert!(out.pair.alpha.max_imag() == 0.0);
}

#[test]
fn psi_conjugates_tau() {
    // ψ⁻¹∘τ₁∘ψ = τ₊ pointwise, i.e. τ₁∘ψ = ψ∘τ₊
    let t = desk_instance(9, 1e-4);
    let out = run(&t);
    for (xi, eta) in [(c(0.05, 0.01), c(0.02, -0.03)), (c(-0.03, 0.0), c(0.04, 0.02))] {
        let (a, b) = out.psi.eval(xi, eta);
        let lhs = t.eval_tau1(a, b);
        let (x2, y2) = out.pair.eval_tau1(xi, eta);
        let rhs = out.psi.eval(x2, y2);
        assert!((lhs.0 - rhs.0).norm() + (lhs.1 - rhs.1).norm() < 1e-11);
    }
}

#[test]
fn skew_derivative_terms_cancel_under_l() {
    let t = desk_instance(10, 1e-4);
    let g = desk_geometry(&t);
    let (u, v) = solve_cohomological(&t, &compose_sigma(&t).unwrap(), &g, &desk_omegas()).unwrap();
    let d = t.degree();
    let e = half_rotation(&t.alpha, 1.0, d).unwrap();
    let ei = half_rotation(&t.alpha, -1.0, d).unwrap();
    let da = CrownSeries::lift(&t.alpha.derivative().with_dz(d / 2), d);
    let w = &(&u.mul_eta() + &v.mul_xi()) * &da;
    let p1 = (&e * &w).mul_eta().scale(c(0.0, -0.5));
    let p2 = (&ei * &w).mul_xi().scale(c(0.0, 0.5));
    let l = skew_operator_L(&t.alpha.scale_real(0.5), &p1, &p2).unwrap();
    assert!(l.max_abs() < 1e-18);
}

#[test]
fn report_roundtrips_and_has_csv_row() {
    let r = run(&desk_instance(2, 1e-4)).report;
    let s = serde_json::to_string(&r).unwrap();
    let back: StepReport = serde_json::from_str(&s).unwrap();
    assert_eq!(back, r);
    assert_eq!(StepReport::csv_header().len(), r.csv_record(0).len());
    assert!(r.checks.iter().chain(r.practical.iter()).all(|c| c.measured.is_finite()));
}

#[test]
fn chain_applies_last_map_first() {
    let d = 6;
    let a = SeriesMap::new(CrownSeries::xi(d).scale_real(2.0), CrownSeries::eta(d));
    let b = SeriesMap::new(&CrownSeries::xi(d) + &CrownSeries::monomial(0, 1, c(1.0, 0.0), d), CrownSeries::eta(d));
    let mut chain = TransformChain::new();
    chain.push(a.clone());
    chain.push(b.clone());
    let (x, y) = chain.apply(c(0.1, 0.0), c(0.2, 0.0)).unwrap();
    assert!((x - c(0.6, 0.0)).norm() < 1e-15 && (y - c(0.2, 0.0)).norm() < 1e-15);
    let series = chain.compose_series(d);
    let (xs, _) = series.eval(c(0.1, 0.0), c(0.2, 0.0));
    assert!((xs - x).norm() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn theta_is_real_and_product_preserving(c0 in -0.02f64..0.02, c1 in -0.02f64..0.02, im in -0.02f64..0.02) {
        let d = 8;
        let alpha = CoeffSeries64::from_real(d / 2, &[0.9, 1.0]);
        let a = CoeffSeries::from_coeffs(vec![c(c0, im), c(c1, -im)]).with_dz(d / 2);
        let th = theta_root(&alpha, &a).unwrap();
        prop_assert_eq!(th.max_imag(), 0.0);
        let s = product_scaling(&th, d).unwrap();
        let prod = &s.x * &s.y;
        let xe = &CrownSeries::xi(d) * &CrownSeries::eta(d);
        prop_assert!((&prod - &xe).max_abs() < 1e-14);
    }
}
