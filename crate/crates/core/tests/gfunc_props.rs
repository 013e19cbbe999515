mod common;

use gsde::gfunc::{c_constant_matrix, g_matrix, g_scalar, gamma_bar, UncertaintySet};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn sym(m: usize, v: &[f64]) -> DMatrix<f64> {
    let a = DMatrix::from_fn(m, m, |i, j| v[i * m + j]);
    (&a + a.transpose()) * 0.5
}

fn interval_set() -> impl Strategy<Value = UncertaintySet> {
    (1usize..=3)
        .prop_flat_map(|m| {
            (
                prop::collection::vec(0.0..5.0f64, m),
                prop::collection::vec(0.0..5.0f64, m),
            )
        })
        .prop_map(|(lo, w)| {
            let hi = lo.iter().zip(&w).map(|(l, w)| l + w).collect();
            UncertaintySet::diagonal(lo, hi).unwrap()
        })
}

fn set_and_pair() -> impl Strategy<Value = (UncertaintySet, DMatrix<f64>, DMatrix<f64>)> {
    interval_set().prop_flat_map(|u| {
        let m = u.m();
        (
            Just(u),
            prop::collection::vec(-10.0..10.0f64, m * m),
            prop::collection::vec(-10.0..10.0f64, m * m),
        )
            .prop_map(move |(u, a, b)| (u, sym(m, &a), sym(m, &b)))
    })
}

proptest! {
    #[test]
    fn subadditive((u, a, b) in set_and_pair()) {
        let lhs = g_matrix(&(&a + &b), &u).unwrap();
        let rhs = g_matrix(&a, &u).unwrap() + g_matrix(&b, &u).unwrap();
        prop_assert!(lhs <= rhs + 1e-12);
    }

    #[test]
    fn monotone_in_psd_direction((u, a, b) in set_and_pair()) {
        let psd = &b * b.transpose();
        prop_assert!(g_matrix(&(&a + &psd), &u).unwrap() >= g_matrix(&a, &u).unwrap() - 1e-12);
    }

    #[test]
    fn positively_homogeneous((u, a, _b) in set_and_pair(), lambda in 0.0..20.0f64) {
        let scaled = g_matrix(&(&a * lambda), &u).unwrap();
        prop_assert!((scaled - lambda * g_matrix(&a, &u).unwrap()).abs() <= 1e-10 * (1.0 + scaled.abs()));
    }

    #[test]
    fn bounded_by_sigma_bar((u, a, _b) in set_and_pair()) {
        let g = g_matrix(&a, &u).unwrap();
        let bound = 0.5 * gamma_bar(&u) * a.norm();
        prop_assert!(g.abs() <= bound + 1e-12);
    }

    #[test]
    fn scalar_closed_form(r in -100.0..100.0f64, lo in 0.0..10.0f64, w in 0.0..10.0f64) {
        let u = UncertaintySet::scalar(lo, lo + w).unwrap();
        let expected = 0.5 * (r.max(0.0) * (lo + w) - (-r).max(0.0) * lo);
        prop_assert_eq!(g_scalar(r, &u).unwrap(), expected);
        prop_assert_eq!(g_matrix(&DMatrix::from_element(1, 1, r), &u).unwrap(), expected);
    }

    #[test]
    fn grid_oracle((u, a, _b) in set_and_pair()) {
        let oracle = common::grid_g(&a, u.sigma_sq_lo(), u.sigma_sq_hi(), 11);
        prop_assert!((g_matrix(&a, &u).unwrap() - oracle).abs() <= 1e-9);
    }

    #[test]
    fn constant_matrix_matches_g((u, _a, _b) in set_and_pair(), c in -5.0..5.0f64) {
        let m = u.m();
        let direct = g_matrix(&DMatrix::from_element(m, m, c), &u).unwrap();
        prop_assert!((c_constant_matrix(c, &u) - direct).abs() <= 1e-12);
    }
}

#[test]
fn vertex_set_matches_convex_combination_grid() {
    let v1 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let v2 = DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 3.0]);
    let v3 = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
    let u = UncertaintySet::vertex_set(vec![v1.clone(), v2.clone(), v3.clone()]).unwrap();
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 4.0, 4.0, -2.0]);
    let mut best = f64::NEG_INFINITY;
    let n = 40;
    for i in 0..=n {
        for j in 0..=(n - i) {
            let (w1, w2) = (i as f64 / n as f64, j as f64 / n as f64);
            let gamma = &v1 * w1 + &v2 * w2 + &v3 * (1.0 - w1 - w2);
            best = best.max(0.5 * (gamma * &a).trace());
        }
    }
    assert!((g_matrix(&a, &u).unwrap() - best).abs() < 1e-12);
}

#[test]
fn degenerate_interval_is_linear() {
    let u = UncertaintySet::iid(2, 3.0, 3.0).unwrap();
    let a = DMatrix::from_row_slice(2, 2, &[-1.0, 7.0, 7.0, 2.0]);
    assert_eq!(g_matrix(&a, &u).unwrap(), 0.5 * 3.0 * (-1.0 + 2.0));
    assert_eq!(g_matrix(&(-&a), &u).unwrap(), -g_matrix(&a, &u).unwrap());
}

#[test]
fn gamma_bar_examples() {
    assert_eq!(gamma_bar(&UncertaintySet::scalar(3.5, 4.0).unwrap()), 4.0);
    let u = UncertaintySet::iid(2, 40.0, 50.0).unwrap();
    assert!((gamma_bar(&u) - 50.0 * 2f64.sqrt()).abs() < 1e-12);
}
