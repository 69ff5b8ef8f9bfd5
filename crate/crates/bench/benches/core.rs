use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use rgbsde_bench::{binomial_tree, manufactured_grid, put_coefficients, put_domain, put_paths, put_problem};
use rgbsde_core::{simulate_paths, solve_finite_horizon, solve_obstacle, solve_tree, GridSolveConfig, SolverConfig, TimeGrid};

fn simulation(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate_paths");
    let (domain, coeffs) = (put_domain(), put_coefficients());
    for n_paths in [1_000usize, 10_000] {
        g.bench_with_input(BenchmarkId::from_parameter(n_paths), &n_paths, |b, &n| {
            b.iter(|| simulate_paths(&domain, &coeffs, &[1.0], TimeGrid::new(0.02, 50).unwrap(), n, 3).unwrap())
        });
    }
    g.finish();
}

fn backward_pass(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve_finite_horizon");
    g.sample_size(10);
    let (drv, obs) = put_problem();
    let cfg = SolverConfig::default();
    for n_paths in [1_000usize, 10_000] {
        let bundle = put_paths(n_paths, 50);
        g.bench_with_input(BenchmarkId::from_parameter(n_paths), &bundle, |b, bundle| {
            b.iter(|| solve_finite_horizon(black_box(bundle), &drv, &obs, 1.0, &cfg).unwrap())
        });
    }
    g.finish();
}

fn tree(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve_tree");
    let (drv, obs) = put_problem();
    let cfg = SolverConfig::default();
    for levels in [5usize, 10] {
        let tree = binomial_tree(levels);
        g.bench_with_input(BenchmarkId::from_parameter(levels), &tree, |b, tree| {
            b.iter(|| solve_tree(black_box(tree), &drv, &obs, &cfg).unwrap())
        });
    }
    g.finish();
}

fn grid(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve_obstacle");
    g.sample_size(10);
    let cfg = GridSolveConfig::default();
    for n_grid in [51usize, 101] {
        let prob = manufactured_grid(n_grid);
        g.bench_with_input(BenchmarkId::from_parameter(n_grid), &prob, |b, prob| {
            b.iter(|| solve_obstacle(black_box(prob), &cfg).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, simulation, backward_pass, tree, grid);
criterion_main!(benches);
