use std::sync::Arc;

use proptest::prelude::*;
use rgbsde_core::{
    builtin_driver, builtin_obstacle, contraction_constant, random_tree, simulate_paths, solve_finite_horizon,
    solve_tree, CoefficientSet, Domain, DriverSpec, ExpSum, ObstacleSpec, Params, RandomTreeSpec, SolverConfig,
    TerminalRule, TimeGrid, TreeCarrier, WeightSet,
};

fn params(pairs: &[(&str, f64)]) -> Params {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reflected_paths_stay_in_the_interval(seed in 0u64..1000, sigma in 0.1f64..2.0, drift in -3.0f64..3.0) {
        let d = Domain::interval(-0.5, 0.5).unwrap();
        let b = simulate_paths(&d, &CoefficientSet::constant(vec![drift], sigma), &[0.0], TimeGrid::new(0.01, 50).unwrap(), 20, seed).unwrap();
        for p in 0..20 {
            for k in 0..50 {
                let x = b.state(p, k + 1)[0];
                prop_assert!((-0.5..=0.5).contains(&x));
                prop_assert!(b.dg(p, k) >= 0.0);
                if b.dg(p, k) > 0.0 {
                    prop_assert!(b.on_boundary(p, k));
                }
            }
        }
    }

    #[test]
    fn tree_solution_dominates_obstacle_with_flat_k(seed in 0u64..500, strike in 0.0f64..1.2, c in -1.0f64..1.0, a in -1.0f64..0.0) {
        let l = random_tree(&RandomTreeSpec::new(4, 3), seed).unwrap();
        let tree = TreeCarrier::new(l).unwrap();
        let drv = builtin_driver("linear", &params(&[("c", c), ("a", a), ("b", -1.0)])).unwrap();
        let obs = builtin_obstacle("put", &params(&[("strike", strike)]), TerminalRule::ObstacleAtStop).unwrap();
        let s = solve_tree(&tree, &drv, &obs, &SolverConfig::default()).unwrap();
        prop_assert!(s.diagnostics.min_dominance_gap >= -1e-12);
        prop_assert_eq!(s.diagnostics.skorokhod_residual, 0.0);
        for p in 0..s.n_paths {
            for k in 0..s.n_steps {
                prop_assert!(s.k(p, k + 1) >= s.k(p, k));
                if s.delta_k(p, k) > 0.0 {
                    prop_assert!((s.y(p, k) - s.h(p, k)).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn contraction_constant_decreases_in_t0(t0 in 0.0f64..10.0, dt in 0.01f64..2.0, r in 0.2f64..3.0) {
        let w = WeightSet {
            u: ExpSum::exp(0.5, r),
            v: ExpSum::exp(1.0, r),
            v_prime: ExpSum::exp(2.0, r),
            local_time_rate: 1.5,
        };
        prop_assert!(contraction_constant(&w, t0 + dt).unwrap() < contraction_constant(&w, t0).unwrap());
    }

    #[test]
    fn exp_sum_tail_integrals_match_quadrature(c in -3.0f64..3.0, r in 0.3f64..3.0, t0 in 0.0f64..3.0) {
        let e = ExpSum { terms: vec![(c, r), (0.5, 2.0 * r)] };
        // Composite Simpson on [t0, t0 + 40/r], where the tail is below 1e-17.
        let n = 20_000;
        let hi = t0 + 40.0 / r;
        let h = (hi - t0) / n as f64;
        let simpson = |f: &dyn Fn(f64) -> f64| {
            let mut s = f(t0) + f(hi);
            for i in 1..n {
                s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(t0 + i as f64 * h);
            }
            s * h / 3.0
        };
        let one = simpson(&|t| e.eval(t));
        let two = simpson(&|t| e.eval(t).powi(2));
        prop_assert!((e.tail_integral(t0).unwrap() - one).abs() <= 1e-9 * (1.0 + one.abs()));
        prop_assert!((e.tail_integral_of_square(t0).unwrap() - two).abs() <= 1e-9 * (1.0 + two.abs()));
    }
}

#[test]
fn monte_carlo_solution_dominates_obstacle() {
    let d = Domain::interval(0.0, 2.0).unwrap();
    let b = simulate_paths(&d, &CoefficientSet::constant(vec![0.0], 0.4), &[1.0], TimeGrid::new(0.02, 50).unwrap(), 5000, 3).unwrap();
    let drv = builtin_driver("put-payoff", &params(&[])).unwrap();
    let obs = builtin_obstacle("put", &params(&[("strike", 1.1)]), TerminalRule::ObstacleAtStop).unwrap();
    let s = solve_finite_horizon(&b, &drv, &obs, 1.0, &SolverConfig::default()).unwrap();
    assert!(s.diagnostics.min_dominance_gap >= -1e-12);
    assert_eq!(s.diagnostics.skorokhod_residual, 0.0);
    assert!((0..s.n_paths).any(|p| s.k(p, s.n_steps) > 0.0));
    for p in 0..s.n_paths {
        for k in 0..s.n_steps {
            assert!(s.k(p, k + 1) >= s.k(p, k));
        }
    }
}

#[test]
fn y0_is_the_mean_of_the_pathwise_values() {
    let d = Domain::interval(0.0, 1.0).unwrap();
    let b = simulate_paths(&d, &CoefficientSet::constant(vec![0.0], 1.0), &[0.3], TimeGrid::new(0.02, 50).unwrap(), 3000, 9).unwrap();
    let drv = DriverSpec::new("quad", Arc::new(|_, x, y, _| x[0] - 0.5 * y), Arc::new(|_, _, y| -y));
    let obs = ObstacleSpec::constant(0.1, TerminalRule::Explicit(Arc::new(|x: &[f64]| x[0])));
    let s = solve_finite_horizon(&b, &drv, &obs, 1.0, &SolverConfig::default()).unwrap();
    let mean = s.pathwise().iter().sum::<f64>() / s.n_paths as f64;
    assert!((mean - s.y0()).abs() <= 1e-12 * (1.0 + mean.abs()));
}
