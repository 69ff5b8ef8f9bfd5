//! Fixtures shared by the benchmarks.

use rgbsde_core::{
    assemble, builtin_driver, builtin_obstacle, builtin_terminal, simulate_paths, CoefficientSet, Domain, DriverSpec,
    GridProblem, Lattice, ObstacleSpec, Params, PathBundle, TerminalRule, TimeGrid, TreeCarrier,
};

pub fn params(pairs: &[(&str, f64)]) -> Params {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

pub fn put_domain() -> Domain {
    Domain::interval(0.0, 3.0).unwrap()
}

pub fn put_coefficients() -> CoefficientSet {
    CoefficientSet::constant(vec![0.0], 0.3)
}

pub fn put_paths(n_paths: usize, n_steps: usize) -> PathBundle {
    let grid = TimeGrid::new(1.0 / n_steps as f64, n_steps).unwrap();
    simulate_paths(&put_domain(), &put_coefficients(), &[1.0], grid, n_paths, 7).unwrap()
}

/// Discounted American put on `[0, 3]`.
pub fn put_problem() -> (DriverSpec, ObstacleSpec) {
    let drv = builtin_driver("put-payoff", &params(&[("rate", 0.05), ("gamma", 1.0)])).unwrap();
    let obs = builtin_obstacle("put", &params(&[("strike", 1.0)]), TerminalRule::ObstacleAtStop).unwrap();
    (drv, obs)
}

pub fn binomial_tree(levels: usize) -> TreeCarrier {
    let (_, obs) = put_problem();
    let lattice = Lattice::binomial(1.0, 1.1, 0.9, 0.5, levels, 1.0 / levels as f64, |x| obs.h(&[x])).unwrap();
    TreeCarrier::new(lattice).unwrap()
}

/// Neumann obstacle problem with a known smooth solution on `[0, 1]`.
pub fn manufactured_grid(n_grid: usize) -> GridProblem {
    let p = params(&[("sigma", 1.0), ("drift", 0.0), ("a", 0.0), ("b", 1.0)]);
    let drv = builtin_driver("manufactured-pde", &p).unwrap();
    let terminal = builtin_terminal("manufactured", &Params::new()).unwrap();
    let obs = builtin_obstacle("constant", &params(&[("level", -10.0)]), terminal).unwrap();
    let domain = Domain::interval(0.0, 1.0).unwrap();
    assemble(&domain, &CoefficientSet::constant(vec![0.0], 1.0), &drv, &obs, n_grid).unwrap()
}
