mod common;

use gsde::diagnostics::sublinear_expectation;
use gsde::engine::{simulate, simulate_batch, InitialState, SimOptions, StopReason};
use gsde::gfunc::UncertaintySet;
use gsde::scenarios::{generate_family, ScenarioMode, VolatilityScenario};

fn second_moment(
    a: f64,
    k: f64,
    sigma_sq: f64,
    dt: f64,
    n_steps: usize,
    trials: usize,
) -> (f64, f64) {
    let sys = common::scalar_linear(a, k);
    let u = UncertaintySet::scalar(sigma_sq, sigma_sq).unwrap();
    let family = generate_family(&u, n_steps, dt, 1, ScenarioMode::Constant, 1, 0).unwrap();
    let opts = SimOptions {
        record_stride: n_steps,
        ..SimOptions::default()
    };
    let batch = simulate_batch(
        &sys,
        &family,
        &InitialState::Fixed { x0: vec![1.0] },
        trials,
        77,
        &opts,
    )
    .unwrap();
    let est = sublinear_expectation(|t| t.terminal()[0].powi(2), &batch).unwrap();
    (est.sup, est.sup_std_err)
}

#[test]
fn weak_error_is_first_order() {
    let (a, k, s2, horizon): (f64, f64, f64, f64) = (-1.0, 0.5, 1.0, 1.0);
    let exact = ((2.0 * a + k * k * s2) * horizon).exp();
    let mut errors = Vec::new();
    for n in [4usize, 8, 16, 32] {
        let dt = horizon / n as f64;
        // E x_{n+1}² = ((1 + a dt)² + k²σ² dt) E x_n² for the Euler scheme.
        let discrete = ((1.0 + a * dt).powi(2) + k * k * s2 * dt).powi(n as i32);
        let (mc, se) = second_moment(a, k, s2, dt, n, 400_000);
        assert!(
            (mc - discrete).abs() <= 4.0 * se,
            "n = {n}: {mc} vs {discrete} (se {se})"
        );
        errors.push((mc - exact).abs());
    }
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.4..=2.8).contains(&ratio), "errors {errors:?}");
    }
}

#[test]
fn zero_noise_is_explicit_euler() {
    let sys = common::scalar_linear(-2.0, 0.0);
    let scen = VolatilityScenario::constant(0, 0.01, 100, &[1.0]).unwrap();
    let t = simulate(&sys, &scen, &[3.0], 1, &SimOptions::default()).unwrap();
    let expected = 3.0 * (1.0 - 0.02f64).powi(100);
    assert!((t.terminal()[0] - expected).abs() < 1e-12);
}

#[test]
fn explosion_step_is_monotone_in_radius() {
    let sys = common::scalar_linear(3.0, 1.0);
    let scen = VolatilityScenario::constant(0, 0.01, 2000, &[1.0]).unwrap();
    let mut last = 0;
    for radius in [10.0, 1e3, 1e5, 1e7] {
        let opts = SimOptions {
            explode_radius: radius,
            ..SimOptions::default()
        };
        let t = simulate(&sys, &scen, &[1.0], 5, &opts).unwrap();
        let StopReason::Exploded { step, .. } = t.stop_reason else {
            panic!(
                "expected explosion at radius {radius}, got {:?}",
                t.stop_reason
            );
        };
        assert!(step >= last);
        last = step;
    }
}

#[test]
fn summaries_do_not_depend_on_thread_count() {
    let sys = common::scalar_linear(-1.0, 1.0);
    let u = UncertaintySet::scalar(1.0, 2.0).unwrap();
    let family = generate_family(&u, 200, 0.005, 3, ScenarioMode::PiecewiseRandom, 5, 9).unwrap();
    let x0 = InitialState::Fixed { x0: vec![1.0] };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| simulate_batch(&sys, &family, &x0, 64, 3, &SimOptions::default()).unwrap())
            .summary()
            .to_json()
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(7));
}
