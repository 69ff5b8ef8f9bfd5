use rgbsde_core::{
    builtin_driver, builtin_obstacle, optimality_test, simulate_paths, solve_finite_horizon, Carrier, CoefficientSet,
    Domain, Params, SolverConfig, StoppingRule, TerminalRule, TimeGrid,
};

#[test]
fn no_deterministic_time_dominates_the_regression_rule() {
    let domain = Domain::interval(0.0, 3.0).unwrap();
    let bundle = simulate_paths(
        &domain,
        &CoefficientSet::constant(vec![0.0], 0.3),
        &[1.0],
        TimeGrid::new(0.02, 50).unwrap(),
        100_000,
        21,
    )
    .unwrap();
    let p = |pairs: &[(&str, f64)]| -> Params { pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect() };
    let drv = builtin_driver("put-payoff", &p(&[("rate", 0.05), ("gamma", 1.0)])).unwrap();
    let obs = builtin_obstacle("put", &p(&[("strike", 1.0)]), TerminalRule::ObstacleAtStop).unwrap();
    let cfg = SolverConfig::default();
    let sol = solve_finite_horizon(&bundle, &drv, &obs, 1.0, &cfg).unwrap();
    let candidates: Vec<StoppingRule> = (1..=10).map(|i| StoppingRule::Deterministic { t: i as f64 * 0.1 }).collect();
    let report = optimality_test(&sol, &Carrier::Paths(&bundle), &drv, &obs, &candidates, &cfg).unwrap();
    assert_eq!(report.rules.len(), 10);
    assert_eq!(report.flagged().count(), 0, "{:?}", report.rules);
    eprintln!("y0 {} r_opt {} gap {}", report.y0, report.r_opt, report.gap);
    assert_eq!(report.k_at_opt, 0.0);
}
