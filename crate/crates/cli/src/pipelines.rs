//! The experiment pipelines. Each writes its artifacts through the sink and
//! returns a JSON summary for one seed.

use std::io::Write;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Value};

use rgbsde_core::pricing::exhaustive_tree_check;
use rgbsde_core::solver::{random_horizon_sequence, stop_indices};
use rgbsde_core::{
    apriori_estimate_check, assemble, compare_probabilistic, optimality_test, random_tree, reflected_from_snell,
    simulate_path_batch, simulate_paths, solve_finite_horizon, solve_infinite_on, solve_obstacle,
    solve_random_horizon, solve_tree, viscosity_residual, Carrier, Lattice, PdeSolution, ProbePoint, RandomTreeSpec,
    SolutionBundle, StoppingRule, TreeCarrier, TreeDrivers,
};

use crate::config::{ExperimentConfig, HorizonCfg, PdeCfg, Pipeline, TreeCfg};
use crate::manifest::OutputSink;
use crate::model;

/// Tree seeds of one run: `seed * 1000 + i`.
pub fn tree_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(1000).wrapping_add(i as u64)
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64, sink: &mut OutputSink) -> Result<Value> {
    match cfg.pipeline {
        Pipeline::SnellCrosscheck => snell_crosscheck(cfg, seed, sink),
        Pipeline::AmericanTree => american_tree(cfg, sink),
        Pipeline::RandomHorizon => random_horizon(cfg, seed, sink),
        Pipeline::InfiniteHorizon => infinite_horizon(cfg, seed, sink),
        Pipeline::NeumannPde => neumann_pde(cfg, sink),
        Pipeline::FeynmanKac => feynman_kac(cfg, seed, sink),
    }
}

fn write_solution(sink: &mut OutputSink, cfg: &ExperimentConfig, sol: &SolutionBundle) -> Result<()> {
    sink.write_with("solution.csv", |w| sol.write_csv_paths(w, cfg.output.csv_paths))?;
    let diag = sol.diagnostics_json()?;
    sink.write("diagnostics.json", format!("{diag}\n").as_bytes())
}

fn snell_crosscheck(cfg: &ExperimentConfig, seed: u64, sink: &mut OutputSink) -> Result<Value> {
    let Some(TreeCfg::Random {
        levels,
        min_children,
        max_children,
        contact_prob,
        count,
    }) = cfg.tree.clone()
    else {
        bail!("snell_crosscheck needs tree.kind = \"random\"");
    };
    let drv = model::driver(cfg)?;
    let obs = model::obstacle(cfg)?;
    let spec = RandomTreeSpec {
        levels,
        min_children,
        max_children,
        contact_prob,
    };
    let mut table = Vec::new();
    writeln!(table, "tree,seed,nodes,paths,y0,oracle_y0,max_gap_y,max_gap_k,skorokhod_residual")?;
    let (mut max_gap, mut max_resid) = (0.0f64, 0.0f64);
    for i in 0..count {
        let ts = tree_seed(seed, i);
        let lattice = random_tree(&spec, ts).context("snell: random tree")?;
        let data = TreeDrivers::evaluate(&lattice, &drv, &obs).context("snell: driver values")?;
        let oracle = reflected_from_snell(&lattice, &data).context("snell: envelope")?;
        let n_nodes = lattice.len();
        let tree = TreeCarrier::new(lattice).context("rgbsde_solver: tree carrier")?;
        let sol = solve_tree(&tree, &drv, &obs, &cfg.solver).context("rgbsde_solver: backward pass")?;
        let (mut gy, mut gk) = (0.0f64, 0.0f64);
        for p in 0..sol.n_paths {
            for k in 0..=sol.n_steps {
                let node = tree.node(p, k);
                gy = gy.max((sol.y(p, k) - oracle.y[node]).abs());
                gk = gk.max((sol.k(p, k) - oracle.k[node]).abs());
            }
        }
        let resid = sol.diagnostics.skorokhod_residual;
        max_gap = max_gap.max(gy).max(gk);
        max_resid = max_resid.max(resid.abs());
        writeln!(
            table,
            "{i},{ts},{n_nodes},{},{},{},{gy:e},{gk:e},{resid:e}",
            sol.n_paths,
            sol.y0(),
            oracle.y[0]
        )?;
    }
    sink.write("oracle_equivalence.csv", &table)?;
    Ok(json!({
        "trees": count,
        "max_gap": max_gap,
        "max_skorokhod_residual": max_resid,
        "equivalent": max_gap <= 1e-10,
    }))
}

fn american_tree(cfg: &ExperimentConfig, sink: &mut OutputSink) -> Result<Value> {
    let Some(TreeCfg::Binomial {
        x0,
        up,
        down,
        p_up,
        levels,
        dt,
        exhaustive,
    }) = cfg.tree.clone()
    else {
        bail!("american_tree needs tree.kind = \"binomial\"");
    };
    let drv = model::driver(cfg)?;
    let obs = model::obstacle(cfg)?;
    let lattice = Lattice::binomial(x0, up, down, p_up, levels, dt, |x| obs.h(&[x])).context("snell: binomial tree")?;
    let tree = TreeCarrier::new(lattice).context("rgbsde_solver: tree carrier")?;
    let sol = solve_tree(&tree, &drv, &obs, &cfg.solver).context("rgbsde_solver: backward pass")?;
    write_solution(sink, cfg, &sol)?;
    let carrier = Carrier::Tree(&tree);
    let times = cfg.pricing.as_ref().map(|p| p.times.clone()).unwrap_or_default();
    let mut candidates: Vec<StoppingRule> = times.iter().map(|&t| StoppingRule::Deterministic { t }).collect();
    if candidates.is_empty() {
        candidates.push(StoppingRule::Deterministic {
            t: levels as f64 * dt,
        });
    }
    let report =
        optimality_test(&sol, &carrier, &drv, &obs, &candidates, &cfg.solver).context("pricing: optimality test")?;
    sink.write_with("pricing.csv", |w| report.write_csv(w))?;
    let mut summary = json!({
        "y0": report.y0,
        "r_opt": report.r_opt,
        "gap": report.gap,
        "gap_ok": report.gap_ok,
        "k_at_opt": report.k_at_opt,
        "flagged": report.flagged().count(),
        "skorokhod_residual": sol.diagnostics.skorokhod_residual,
    });
    if exhaustive {
        let ex = exhaustive_tree_check(&sol, &tree, &drv, &obs, &cfg.solver).context("pricing: exhaustive check")?;
        sink.write_json("exhaustive.json", &ex)?;
        summary["exhaustive"] = json!({
            "n_rules": ex.n_rules,
            "max_r": ex.max_r,
            "violations": ex.violations,
        });
    }
    Ok(summary)
}

/// Nodes after the stop index where `Y != xi`, `Z != 0` or `K` moved.
pub fn freeze_violations(sol: &SolutionBundle, carrier: &Carrier<'_>, xi: impl Fn(&[f64]) -> f64) -> usize {
    let mut bad = 0;
    for p in 0..sol.n_paths {
        let s = sol.stop_index(p);
        let target = xi(carrier.state(p, s));
        let k_stop = sol.k(p, s);
        for k in s..=sol.n_steps {
            let z_moves = k < sol.n_steps && sol.z(p, k).iter().any(|&v| v != 0.0);
            if sol.y(p, k) != target || sol.k(p, k) != k_stop || z_moves {
                bad += 1;
            }
        }
    }
    bad
}

fn random_horizon(cfg: &ExperimentConfig, seed: u64, sink: &mut OutputSink) -> Result<Value> {
    let s = model::sde(cfg)?;
    let (domain, coeffs, grid) = (model::domain(cfg)?, model::coefficients(cfg)?, model::grid(cfg)?);
    let drv = model::driver(cfg)?;
    let obs = model::obstacle(cfg)?;
    let rule = model::hitting_rule(cfg)?;
    let n = grid.n_steps;
    let dt = grid.dt;
    let bundle = simulate_paths(&domain, &coeffs, &s.x0, grid, s.n_paths, seed).context("reflected_sde: simulate")?;
    let carrier = Carrier::Paths(&bundle);
    let mut sol = solve_random_horizon(&carrier, &drv, &obs, &rule, n, &cfg.solver)
        .context("rgbsde_solver: backward pass")?;
    let est = apriori_estimate_check(&sol, &carrier, &drv).context("rgbsde_solver: a-priori estimate")?;
    sol.diagnostics.estimate_ratio = Some(est.ratio);
    let frozen = freeze_violations(&sol, &carrier, |x| obs.xi(x));
    let (_, never) = stop_indices(&carrier, &rule, n);
    write_solution(sink, cfg, &sol)?;
    sink.write_json("estimate.json", &est)?;
    if let Some(HorizonCfg::Hitting { sequence, .. }) = &cfg.horizon {
        if !sequence.is_empty() {
            let pts = random_horizon_sequence(&carrier, &drv, &obs, &rule, sequence, &cfg.solver)
                .context("rgbsde_solver: horizon sequence")?;
            let mut out = Vec::new();
            writeln!(out, "n_horizon,t,y0,stderr")?;
            for p in &pts {
                writeln!(out, "{},{},{},{}", p.n_horizon, p.n_horizon as f64 * dt, p.y0, p.stderr)?;
            }
            sink.write("horizon_sensitivity.csv", &out)?;
        }
    }
    Ok(json!({
        "y0": sol.y0(),
        "y0_stderr": sol.y0_stderr(),
        "skorokhod_residual": sol.diagnostics.skorokhod_residual,
        "freeze_violations": frozen,
        "never_stopped": never,
        "estimate": est,
    }))
}

fn infinite_horizon(cfg: &ExperimentConfig, seed: u64, sink: &mut OutputSink) -> Result<Value> {
    let s = model::sde(cfg)?;
    let (domain, coeffs, grid) = (model::domain(cfg)?, model::coefficients(cfg)?, model::grid(cfg)?);
    let drv = model::driver(cfg)?;
    let obs = model::obstacle(cfg)?;
    let weights = model::weights(cfg)?;
    let picard = cfg.picard.unwrap_or_default();
    let bundle = simulate_paths(&domain, &coeffs, &s.x0, grid, s.n_paths, seed).context("reflected_sde: simulate")?;
    let carrier = Carrier::Paths(&bundle);
    let sol = solve_infinite_on(&carrier, &drv, &weights, &obs, &cfg.solver, &picard)
        .context("rgbsde_solver: infinite-horizon Picard")?;
    write_solution(sink, cfg, &sol)?;
    let d = &sol.diagnostics;
    let mut trace = Vec::new();
    writeln!(trace, "iteration,distance,ratio")?;
    for (i, dist) in d.picard_trace.iter().enumerate() {
        let ratio = if i == 0 { String::new() } else { d.picard_ratios[i - 1].to_string() };
        writeln!(trace, "{},{dist},{ratio}", i + 1)?;
    }
    sink.write("picard.csv", &trace)?;
    Ok(json!({
        "y0": sol.y0(),
        "y0_stderr": sol.y0_stderr(),
        "t0": d.t0,
        "contraction_constant": d.contraction_constant,
        "picard_converged": d.picard_converged,
        "iterations": d.picard_trace.len(),
        "max_ratio": d.picard_ratios.iter().copied().fold(0.0f64, f64::max),
    }))
}

fn pde_cfg(cfg: &ExperimentConfig) -> Result<&PdeCfg> {
    cfg.pde.as_ref().ok_or_else(|| anyhow!("missing [pde]"))
}

fn reference(name: Option<&str>) -> Result<Option<fn(f64) -> f64>> {
    match name {
        None => Ok(None),
        Some("square") => Ok(Some(rgbsde_core::drivers::manufactured_square)),
        Some(other) => bail!("unknown pde.reference '{other}'"),
    }
}

/// Solves the grid problem and writes `pde.csv`; returns the grid summary.
fn grid_stage(
    cfg: &ExperimentConfig,
    sink: &mut OutputSink,
) -> Result<(rgbsde_core::GridProblem, PdeSolution, Value)> {
    let p = pde_cfg(cfg)?;
    let (domain, coeffs) = (model::domain(cfg)?, model::coefficients(cfg)?);
    let drv = model::driver(cfg)?;
    let obs = model::obstacle(cfg)?;
    let prob = assemble(&domain, &coeffs, &drv, &obs, p.n_grid).context("pde: assemble")?;
    let sol = solve_obstacle(&prob, &p.solve_config()).context("pde: projected Gauss-Seidel")?;
    let visc = viscosity_residual(&sol.u, &prob).context("pde: viscosity residual")?;
    sink.write_with("pde.csv", |w| sol.write_csv(w))?;
    let mut summary = json!({
        "n_grid": p.n_grid,
        "iterations": sol.iterations,
        "max_residual": sol.max_residual,
        "neumann_residual": sol.neumann_residual,
        "monotone": prob.is_monotone(),
        "viscosity_max_abs": visc.max_abs,
        "active_nodes": sol.active.iter().filter(|&&a| a).count(),
    });
    if let Some(r) = reference(p.reference.as_deref())? {
        let err = sol.x.iter().zip(&sol.u).map(|(&x, &u)| (u - r(x)).abs()).fold(0.0f64, f64::max);
        summary["max_error"] = json!(err);
    }
    Ok((prob, sol, summary))
}

fn neumann_pde(cfg: &ExperimentConfig, sink: &mut OutputSink) -> Result<Value> {
    Ok(grid_stage(cfg, sink)?.2)
}

/// Pooled `Y_0` over batches of paths with consecutive stream indices.
pub fn batched_y0(cfg: &ExperimentConfig, x0: &[f64], seed: u64) -> Result<(f64, f64)> {
    let s = model::sde(cfg)?;
    let (domain, coeffs, grid) = (model::domain(cfg)?, model::coefficients(cfg)?, model::grid(cfg)?);
    let drv = model::driver(cfg)?;
    let obs = model::obstacle(cfg)?;
    let horizon = cfg.horizon.as_ref().map(|h| h.end()).ok_or_else(|| anyhow!("missing [horizon]"))?;
    let batch = s.batch.unwrap_or(s.n_paths).min(s.n_paths);
    let total = s.n_paths as f64;
    let (mut mean, mut var) = (0.0, 0.0);
    let mut first = 0;
    while first < s.n_paths {
        let nb = batch.min(s.n_paths - first);
        let bundle = simulate_path_batch(&domain, &coeffs, x0, grid.clone(), first, nb, seed)
            .context("reflected_sde: simulate")?;
        let sol = solve_finite_horizon(&bundle, &drv, &obs, horizon, &cfg.solver)
            .context("rgbsde_solver: backward pass")?;
        let w = nb as f64 / total;
        mean += w * sol.y0();
        var += w * w * sol.y0_stderr().powi(2);
        first += nb;
    }
    Ok((mean, var.sqrt()))
}

fn feynman_kac(cfg: &ExperimentConfig, seed: u64, sink: &mut OutputSink) -> Result<Value> {
    let p = pde_cfg(cfg)?;
    let dt = model::sde(cfg)?.dt;
    let (prob, pde, mut summary) = grid_stage(cfg, sink)?;
    let mut probes = Vec::with_capacity(p.probes.len());
    for &x in &p.probes {
        let (y0, stderr) = batched_y0(cfg, &[x], seed).with_context(|| format!("probe x = {x}"))?;
        probes.push(ProbePoint { x, y0, stderr });
    }
    // A configured tolerance replaces the default discretization allowance.
    let c_disc = match p.tolerance {
        Some(tol) => tol / (prob.dx * prob.dx + dt.sqrt()),
        None => p.c_disc,
    };
    let table = compare_probabilistic(&prob, &pde, &probes, c_disc, dt);
    sink.write_with("comparison.csv", |w| table.write_csv(w))?;
    summary["comparison_flags"] = json!(table.flags());
    summary["comparison_max_gap"] = json!(table.max_gap());
    if let Some(r) = reference(p.reference.as_deref())? {
        let allowance = table.rows.first().map(|row| row.bound - 3.0 * row.stderr).unwrap_or(0.0);
        let mut out = Vec::new();
        writeln!(out, "x,y0_mc,stderr,u_ref,gap,bound,flag")?;
        let mut flags = 0;
        for pt in &probes {
            let gap = (pt.y0 - r(pt.x)).abs();
            let bound = 3.0 * pt.stderr + allowance;
            let flag = !(gap <= bound);
            flags += usize::from(flag);
            writeln!(out, "{},{},{},{},{},{},{}", pt.x, pt.y0, pt.stderr, r(pt.x), gap, bound, u8::from(flag))?;
        }
        sink.write("reference_comparison.csv", &out)?;
        summary["reference_flags"] = json!(flags);
    }
    Ok(summary)
}
