mod common;

use common::{bcd_minimize, minimize, ols, penalized_objective, prox_objective, Pen};
use monospline::design::Groups;
use monospline::solver::{kkt_residual, lambda_max, prox_coop, solve, PenaltyKind, PenaltySpec, SolverConfig};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn prox_examples_match_numerical_minimizer() {
    let cases: [(&[f64], f64); 4] = [
        (&[3.0, 4.0], 2.5),
        (&[3.0, -4.0], 1.0),
        (&[0.5, -0.2, 2.0], 1.0),
        (&[-1.0, -1.0, 0.3, 0.1], 0.4),
    ];
    for (v, t) in cases {
        let closed = prox_coop(v, t);
        let (num, _) = minimize(&|b: &[f64]| prox_objective(v, t, b), v, 0.5);
        for (a, b) in closed.iter().zip(&num) {
            assert!((a - b).abs() <= 1e-6, "{v:?} t={t}: {closed:?} vs {num:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prox_is_the_minimizer(
        v in prop::collection::vec(-3.0f64..3.0, 1..=4),
        t in prop::sample::select(vec![0.1, 1.0, 3.0]),
    ) {
        let closed = prox_coop(&v, t);
        let (num, f_num) = minimize(&|b: &[f64]| prox_objective(&v, t, b), &v, 0.5);
        prop_assert!(prox_objective(&v, t, &closed) <= f_num + 1e-12);
        for (a, b) in closed.iter().zip(&num) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn prox_never_mixes_new_signs(v in prop::collection::vec(-3.0f64..3.0, 1..=6), t in 0.0f64..4.0) {
        let out = prox_coop(&v, t);
        for (o, x) in out.iter().zip(&v) {
            prop_assert!(*o == 0.0 || o.signum() == x.signum());
            prop_assert!(o.abs() <= x.abs());
        }
    }
}

fn instance(seed: u64, n: usize, p: usize, m: usize) -> (Array2<f64>, Array1<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Array2::from_shape_fn((n, p * m), |_| rng.gen_range(-1.0..1.0));
    let y = Array1::from_shape_fn(n, |i| {
        2.0 * z[[i, 0]] + z[[i, 1]] - 1.5 * z[[i, m + 2]] + 0.5 * rng.gen_range(-1.0..1.0)
    });
    (z, y)
}

#[test]
fn small_solves_match_block_descent() {
    for seed in 0..4 {
        let (z, y) = instance(seed, 20, 3, 2);
        for (kind, pen, g) in [
            (PenaltyKind::Coop, Pen::Coop, Groups::new(3, 2)),
            (PenaltyKind::Group, Pen::Group, Groups::new(3, 2)),
            (PenaltyKind::L1, Pen::L1, Groups::new(6, 1)),
        ] {
            let lmax = lambda_max(z.view(), y.view(), &g, kind, &vec![1.0; g.count]).unwrap();
            let lambda = 0.3 * lmax;
            let penalty = PenaltySpec::unit(kind, g.count, lambda);
            let ours = solve(z.view(), y.view(), &g, &penalty, &SolverConfig::default(), None).unwrap();
            let (_, oracle) = bcd_minimize(z.view(), y.view(), g.size, pen, lambda);
            let value = penalized_objective(z.view(), y.view(), g.size, pen, lambda, ours.beta.as_slice().unwrap());
            assert!((value - oracle).abs() <= 1e-6 * oracle, "{kind:?}: {value} vs {oracle}");
            let kkt = kkt_residual(z.view(), y.view(), &g, ours.beta.view(), &penalty).unwrap();
            assert!(kkt <= 1e-4 * lambda);
        }
    }
}

#[test]
fn zero_penalty_reduces_to_least_squares() {
    let (z, y) = instance(11, 30, 3, 2);
    let g = Groups::new(3, 2);
    let cfg = SolverConfig {
        objective_tolerance: 1e-15,
        step_tolerance: 1e-12,
        ..SolverConfig::default()
    };
    let ours = solve(z.view(), y.view(), &g, &PenaltySpec::unit(PenaltyKind::Coop, 3, 0.0), &cfg, None).unwrap();
    let exact = ols(z.view(), y.view());
    for (a, b) in ours.beta.iter().zip(&exact) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }
}
