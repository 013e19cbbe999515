mod common;

use std::sync::Arc;

use common::{box_corners, quadratic_derivatives, quartic_derivatives, LinearSystem};
use gsde::gfunc::UncertaintySet;
use gsde::lyapunov::{
    evaluate_generator, exponential_certificate, generator_terms, DerivativeMode, LyapunovSpec,
    ShellRegion,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()
}

#[test]
fn fixed_volatility_matches_classical_ito() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let (d, m) = (rng.random_range(1..=4), rng.random_range(1..=3));
        let lin = LinearSystem::random(&mut rng, d, m);
        let sys = lin.system();
        let s: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..3.0)).collect();
        let u = UncertaintySet::diagonal(s.clone(), s.clone()).unwrap();
        let gamma = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(s));
        let x = point(&mut rng, d);
        for (spec, (grad, hess)) in [
            (
                LyapunovSpec::power_norm(d, 2.0, 0.0),
                quadratic_derivatives(&x),
            ),
            (
                LyapunovSpec::power_norm(d, 4.0, 0.0),
                quartic_derivatives(&x),
            ),
        ] {
            let lv = evaluate_generator(&sys, &spec, &u, &x, 0.0).unwrap();
            let oracle = lin.classical_generator(&grad, &hess, &gamma, &x);
            assert!(
                (lv - oracle).abs() <= 1e-10 * (1.0 + oracle.abs()),
                "{lv} vs {oracle}"
            );
        }
    }
}

#[test]
fn interval_set_matches_extreme_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let (d, m) = (rng.random_range(1..=4), rng.random_range(1..=3));
        let lin = LinearSystem::random(&mut rng, d, m);
        let sys = lin.system();
        let lo: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..2.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.1..2.0)).collect();
        let u = UncertaintySet::diagonal(lo.clone(), hi.clone()).unwrap();
        let x = point(&mut rng, d);
        let (grad, hess) = quadratic_derivatives(&x);
        let oracle = box_corners(&lo, &hi)
            .into_iter()
            .map(|c| {
                let gamma = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(c));
                lin.classical_generator(&grad, &hess, &gamma, &x)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let lv =
            evaluate_generator(&sys, &LyapunovSpec::power_norm(d, 2.0, 0.0), &u, &x, 0.0).unwrap();
        assert!((lv - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()));
    }
}

#[test]
fn vertex_set_matches_vertex_maximum() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let (d, m) = (3, 2);
        let lin = LinearSystem::random(&mut rng, d, m);
        let sys = lin.system();
        let vertices: Vec<DMatrix<f64>> = (0..3)
            .map(|_| {
                let b = common::random_matrix(&mut rng, m, 1.0);
                &b * b.transpose()
            })
            .collect();
        let u = UncertaintySet::vertex_set(vertices.clone()).unwrap();
        let x = point(&mut rng, d);
        let (grad, hess) = quadratic_derivatives(&x);
        let oracle = vertices
            .iter()
            .map(|g| lin.classical_generator(&grad, &hess, g, &x))
            .fold(f64::NEG_INFINITY, f64::max);
        let lv =
            evaluate_generator(&sys, &LyapunovSpec::power_norm(d, 2.0, 0.0), &u, &x, 0.0).unwrap();
        assert!((lv - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()));
    }
}

#[test]
fn finite_differences_agree_with_analytic() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let u = UncertaintySet::iid(2, 0.5, 1.5).unwrap();
    for _ in 0..50 {
        let lin = LinearSystem::random(&mut rng, 3, 2);
        let sys = lin.system();
        let analytic = LyapunovSpec::power_norm(3, 4.0, 0.3);
        let numeric = analytic
            .clone()
            .with_mode(DerivativeMode::FiniteDifference(None))
            .unwrap();
        let x = point(&mut rng, 3);
        let t = rng.random_range(0.0..2.0);
        let a = generator_terms(&sys, &analytic, &u, &x, t).unwrap();
        let n = generator_terms(&sys, &numeric, &u, &x, t).unwrap();
        let scale = 1.0 + a.lv.abs() + a.kappa.norm();
        assert!((a.lv - n.lv).abs() <= 1e-5 * scale, "{} vs {}", a.lv, n.lv);
        assert!((a.time_partial - n.time_partial).abs() <= 1e-6 * (1.0 + a.time_partial.abs()));
        assert!(analytic.derivative_discrepancy(&x, t).unwrap() < 1e-5);
    }
}

#[test]
fn finite_differences_without_closed_form() {
    // V = log(1 + |x|²) has no preset; compare against hand derivatives.
    let spec = LyapunovSpec::new(
        "log(1+|x|^2)",
        2,
        Arc::new(|x: &[f64], _| (1.0 + x[0] * x[0] + x[1] * x[1]).ln()),
    );
    let x = [0.7, -1.3];
    let der = spec.derivatives(&x, 0.0);
    let s = 1.0 + x[0] * x[0] + x[1] * x[1];
    assert!((der.gradient[0] - 2.0 * x[0] / s).abs() < 1e-8);
    let h01 = -4.0 * x[0] * x[1] / (s * s);
    assert!((der.hessian[(0, 1)] - h01).abs() < 1e-5);
    let h00 = 2.0 / s - 4.0 * x[0] * x[0] / (s * s);
    assert!((der.hessian[(0, 0)] - h00).abs() < 1e-5);
}

#[test]
fn exponential_certificate_on_scalar_linear() {
    // dx = -x dt + 0.5x dB, σ² ∈ [1, 2]: L|x|² = (−2 + 0.25σ̄²)|x|² = −1.5|x|².
    let sys = common::scalar_linear(-1.0, 0.5);
    let u = UncertaintySet::scalar(1.0, 2.0).unwrap();
    let region = ShellRegion::new(0.1, 10.0, 2000, 5);
    let ok = exponential_certificate(
        &sys,
        &LyapunovSpec::power_norm(1, 2.0, 1.4),
        &u,
        1.4,
        2.0,
        &region,
        &[0.0, 1.0],
        1e-9,
    )
    .unwrap();
    assert!(ok.pass);
    assert_eq!(ok.certified_rate, Some(-0.7));
    let bad = exponential_certificate(
        &sys,
        &LyapunovSpec::power_norm(1, 2.0, 1.6),
        &u,
        1.6,
        2.0,
        &region,
        &[0.0, 1.0],
        1e-9,
    )
    .unwrap();
    assert!(!bad.pass && !bad.generator_pass && bad.lower_bound_pass);
    assert_eq!(bad.certified_rate, None);
}
