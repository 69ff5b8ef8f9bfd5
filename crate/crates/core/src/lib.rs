//! Reflected generalized BSDEs on bounded domains: simulation, discrete Snell
//! envelopes, regression solvers, optimal stopping and the obstacle PDE.

pub mod drivers;
pub mod error;
pub mod geometry;
pub mod pde;
pub mod pricing;
pub mod regression;
pub mod sde;
pub mod snell;
pub mod solver;

pub use drivers::{
    builtin_driver, builtin_hitting, builtin_obstacle, builtin_terminal, contraction_constant, monotonicity_probe,
    validate_problem, DriverSpec, ExpSum, HittingRule, HorizonSpec, ObstacleSpec, Params,
    ProbeBox, ProbeConfig, TerminalRule, ValidationReport, WeightSet,
};
pub use error::{Error, Result};
pub use geometry::Domain;
pub use pde::{
    assemble, compare_probabilistic, solve_obstacle, viscosity_residual, ComparisonTable, GridProblem,
    GridSolveConfig, PdeSolution, ProbePoint, SweepOrder,
};
pub use pricing::{extract_optimal_rule, optimality_test, payoff, PayoffReport, RuleEstimate, StoppingRule};
pub use regression::{Basis, RegressionConfig};
pub use sde::{
    hitting_index, moment_report, simulate_path_batch, simulate_paths, CoefficientSet, MomentReport, PathBundle,
    TimeGrid,
};
pub use snell::{
    doob_meyer, optimal_stop, random_tree, reflected_from_snell, snell_envelope, snell_envelope_of, Lattice,
    LatticeNode, RandomTreeSpec, SnellResult, TreeDrivers,
};
pub use solver::{
    apriori_estimate_check, skorokhod_residual, solve_finite_horizon, solve_infinite_horizon, solve_infinite_on,
    solve_on_carrier, solve_random_horizon, solve_tree, BoundaryRule, Carrier, Diagnostics, PicardConfig,
    SolutionBundle, SolverConfig, TimeRule, TreeCarrier,
};
