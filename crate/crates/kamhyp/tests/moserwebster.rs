use kamhyp::involution::*;
use kamhyp::moserwebster::*;
use kamhyp::series::*;
use kamhyp::CrownSeries64;
use num_complex::Complex64 as C;
use proptest::prelude::*;
use std::f64::consts::PI;

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

fn quadric_series(gamma: f64, d: usize) -> CrownSeries64 {
    BishopSurface::quadric(gamma, d).unwrap().equation()
}

fn cubic_surface(gamma: f64, d: usize) -> BishopSurface {
    BishopSurface::from_monomials(
        gamma,
        d,
        &[
            Monomial { m: 3, n: 0, re: 1.0, im: 0.0 },
            Monomial { m: 1, n: 2, re: -0.5, im: 0.0 },
            Monomial { m: 2, n: 2, re: 0.25, im: 0.0 },
        ],
    )
    .unwrap()
}

#[test]
fn deck_of_unit_quadric() {
    let phi = deck_transformation(&BishopSurface::quadric(1.0, 6).unwrap()).unwrap();
    let mut want = CrownSeries::zeros(6);
    want.set(1, 0, c(-1.0, 0.0));
    want.set(0, 1, c(-1.0, 0.0));
    assert_eq!(phi, want);
}

#[test]
fn deck_preserves_quadric_for_any_gamma() {
    for &g in &[0.51, 0.625, 1.0, 3.0] {
        let m = BishopSurface::quadric(g, 6).unwrap();
        let phi = deck_transformation(&m).unwrap();
        assert!(deck_residual(&m, &phi).unwrap() < 1e-15);
    }
}

#[test]
fn deck_for_cubic_perturbation() {
    let m = BishopSurface::from_monomials(1.0, 8, &[Monomial { m: 3, n: 0, re: 1.0, im: 0.0 }]).unwrap();
    let phi = deck_transformation(&m).unwrap();
    assert!(deck_residual(&m, &phi).unwrap() <= 1e-12);
}

#[test]
fn deck_is_involution() {
    let m = cubic_surface(0.8, 9);
    let t = deck_map(&m).unwrap();
    let r = t.compose(&t).minus_identity();
    assert!(r.max_abs() <= 1e-10, "{}", r.max_abs());
}

#[test]
fn rejects_elliptic_and_low_order() {
    assert!(matches!(BishopSurface::quadric(0.5, 4), Err(kamhyp::KamError::NotHyperbolic(_))));
    assert!(matches!(BishopSurface::quadric(0.3, 4), Err(kamhyp::KamError::NotHyperbolic(_))));
    let low = BishopSurface::from_monomials(1.0, 4, &[Monomial { m: 2, n: 0, re: 1.0, im: 0.0 }]);
    assert!(low.is_err());
    let cplx = BishopSurface::from_monomials(1.0, 4, &[Monomial { m: 3, n: 0, re: 0.0, im: 1.0 }]);
    assert!(cplx.is_err());
}

#[test]
fn frame_for_unit_gamma() {
    let f = DiagonalFrame::new(1.0).unwrap();
    assert!((f.lambda - 2.0 * PI / 3.0).abs() < 1e-14);
    assert!((f.root - c(0.5, 3f64.sqrt() / 2.0)).norm() < 1e-15);
}

#[test]
fn frame_for_five_eighths() {
    let f = DiagonalFrame::new(0.625).unwrap();
    assert!(((f.lambda / 2.0).cos() - 0.8).abs() < 1e-14);
    assert!((f.root.norm() - 1.0).abs() < 1e-15);
}

#[test]
fn frame_roots_multiply_and_sum() {
    for &g in &[0.51, 0.7, 1.0, 2.0, 10.0] {
        let (a, b) = quadratic_roots(g);
        assert!((a * b - c(1.0, 0.0)).norm() < 1e-14);
        assert!((a + b - c(1.0 / g, 0.0)).norm() < 1e-14);
        let f = DiagonalFrame::new(g).unwrap();
        assert!(f.root.im >= 0.0 && (0.0..4.0 * PI).contains(&f.lambda));
    }
}

#[test]
fn diagonalize_quadric_has_no_perturbation() {
    let (_, t) = diagonalize(&BishopSurface::quadric(1.0, 8).unwrap()).unwrap();
    assert!(t.p.is_zero() && t.q.is_zero());
    assert!((t.lambda() - 2.0 * PI / 3.0).abs() < 1e-14);
}

#[test]
fn diagonalized_pair_is_involution_and_real() {
    let m = cubic_surface(1.0, 9);
    let (frame, t) = diagonalize(&m).unwrap();
    let tau = t.tau1().unwrap();
    let r = tau.compose(&tau).minus_identity();
    assert!(r.max_abs() < 1e-10);
    // τ₂ from the frame agrees with ρτ₁ρ in diagonal coordinates
    let d = m.degree();
    let phi = deck_transformation(&m).unwrap();
    let w = CrownSeries::eta(d);
    let phi_sw = compose(&phi.conjugate(), &w, &CrownSeries::xi(d)).unwrap();
    let tau2o = SeriesMap::new(phi_sw, w);
    for &(x, y) in &[(c(0.01, 0.02), c(-0.015, 0.005)), (c(-0.02, 0.0), c(0.01, 0.01))] {
        let (z, ww) = frame.from_diag(x, y).unwrap();
        let (z2, w2) = tau2o.eval(z, ww);
        let want = frame.to_diag(z2, w2);
        let got = t.eval_tau2(x, y);
        assert!((got.0 - want.0).norm() < 1e-12 && (got.1 - want.1).norm() < 1e-12);
    }
}

#[test]
fn reconstruct_linear_pair_gives_quadric() {
    for &g in &[1.0, 0.625, 2.5] {
        let d = 6;
        let (_, t) = diagonalize(&BishopSurface::quadric(g, d).unwrap()).unwrap();
        let rec = reconstruct_surface(&t).unwrap();
        assert!((rec.gamma - g).abs() < 1e-12);
        assert!((&rec.bishop - &quadric_series(g, d)).max_abs() <= 1e-10);
    }
}

#[test]
fn reconstruct_perturbed_keeps_invariant() {
    let (_, t) = diagonalize(&cubic_surface(0.9, 8)).unwrap();
    let rec = reconstruct_surface(&t).unwrap();
    assert!((rec.gamma - 0.9).abs() < 1e-12);
    let quad = rec.bishop.degree_band(0, 2);
    assert!((&quad - &quadric_series(0.9, 8)).max_abs() < 1e-12);
}

#[test]
fn phi_intertwines_conjugations() {
    let (_, t) = diagonalize(&cubic_surface(1.0, 8)).unwrap();
    let rec = reconstruct_surface(&t).unwrap();
    for &(x, y) in &[(c(0.03, 0.01), c(0.02, -0.04)), (c(-0.01, 0.02), c(0.0, 0.03))] {
        let (z, w) = rec.phi.eval(x.conj(), y.conj());
        let (z0, w0) = rec.phi.eval(x, y);
        assert!((z - w0.conj()).norm() <= 1e-12);
        assert!((w - z0.conj()).norm() <= 1e-12);
    }
}

#[test]
fn phi1_and_big_phi_are_tau1_invariant() {
    let (_, t) = diagonalize(&cubic_surface(1.0, 8)).unwrap();
    let rec = reconstruct_surface(&t).unwrap();
    let tau = t.tau1().unwrap();
    let a = compose(&rec.phi.x, &tau.x, &tau.y).unwrap();
    let b = compose(&rec.big_phi, &tau.x, &tau.y).unwrap();
    assert!((&a - &rec.phi.x).max_abs() <= 1e-12);
    assert!((&b - &rec.big_phi).max_abs() <= 1e-12);
}

#[test]
fn reconstructed_points_lie_on_surface() {
    let (_, t) = diagonalize(&cubic_surface(1.0, 10)).unwrap();
    let rec = reconstruct_surface(&t).unwrap();
    let (x, y) = (c(0.004, 0.001), c(-0.002, 0.003));
    let (z1, w1, z2) = rec.surface_point(x, y);
    assert!((rec.raw.eval(z1, w1) - z2).norm() < 1e-12);
}

#[test]
fn hyperbola_of_linear_pair_is_constant() {
    let (frame, t) = diagonalize(&BishopSurface::quadric(1.0, 6).unwrap()).unwrap();
    let pts = hyperbola_image(&t, &IdentityTransform, 0.01, 0.3, 5).unwrap();
    assert_eq!(pts.len(), 5 * HYPERBOLA_ARGS);
    for p in &pts {
        assert!((p.z2 - frame.root * 0.01).norm() < 1e-15);
    }
}

#[test]
fn hyperbola_real_branch_residual() {
    let (_, t) = diagonalize(&cubic_surface(1.0, 8)).unwrap();
    let pts = hyperbola_image(&t, &IdentityTransform, -0.004, 0.2, 6).unwrap();
    let real: Vec<_> = pts.iter().filter(|p| p.is_real_branch).collect();
    assert_eq!(real.len(), 12);
    for p in real {
        assert!(p.real_residual <= 1e-10);
        assert!(p.xi.im.abs() < 1e-15 && p.eta.im.abs() < 1e-15);
    }
}

#[test]
fn hyperbola_edge_cases() {
    let t = InvolutionPair::linear(kamhyp::CoeffSeries64::constant(c(1.0, 0.0), 3), 6, 1);
    assert!(hyperbola_image(&t, &IdentityTransform, 0.01, 0.3, 0).unwrap().is_empty());
    assert!(hyperbola_image(&t, &IdentityTransform, 0.0, 0.3, 3).is_err());
    assert!(hyperbola_image(&t, &IdentityTransform, 0.1, 0.3, 3).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn prop_diagonalize_reconstruct_roundtrip(g in 0.55f64..4.0) {
        let (_, t) = diagonalize(&BishopSurface::quadric(g, 6).unwrap()).unwrap();
        let rec = reconstruct_surface(&t).unwrap();
        prop_assert!((&rec.bishop - &quadric_series(g, 6)).max_abs() <= 1e-10);
    }

    #[test]
    fn prop_deck_involution(g in 0.55f64..4.0, a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let m = BishopSurface::from_monomials(g, 8, &[
            Monomial { m: 3, n: 0, re: a, im: 0.0 },
            Monomial { m: 0, n: 3, re: b, im: 0.0 },
        ]).unwrap();
        let t = deck_map(&m).unwrap();
        prop_assert!(t.compose(&t).minus_identity().max_abs() <= 1e-10);
    }
}
