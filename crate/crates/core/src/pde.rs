//! Finite differences for the 1-D obstacle problem
//!
//! `min{u - h, -(Lu + f(x, u, u' sigma))} = 0` on `(a, b)`, `du/dn + g(x, u) = 0` at `a, b`,
//!
//! with `L = sigma^2/2 d^2/dx^2 + b d/dx` and `n` the inward normal. The Neumann
//! condition is imposed with ghost nodes; the discrete problem is solved by
//! projected nonlinear Gauss–Seidel (optionally over-relaxed) with a scalar
//! Newton solve per node.

use serde::{Deserialize, Serialize};

use crate::drivers::{DriverSpec, ObstacleSpec};
use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::sde::CoefficientSet;

#[derive(Clone, Debug)]
pub struct GridProblem {
    pub a: f64,
    pub b: f64,
    pub dx: f64,
    pub x: Vec<f64>,
    /// `sigma(x_i)`.
    pub sigma: Vec<f64>,
    /// `b(x_i)`.
    pub drift: Vec<f64>,
    pub h: Vec<f64>,
    driver: DriverSpec,
}

/// Coefficients of `(L_h u)_i = lower u_{i-1} + diag u_i + upper u_{i+1}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stencil {
    pub lower: f64,
    pub diag: f64,
    pub upper: f64,
}

/// Builds the grid problem on `n_grid` nodes of an interval domain.
pub fn assemble(
    domain: &Domain,
    coeffs: &CoefficientSet,
    driver: &DriverSpec,
    obstacle: &ObstacleSpec,
    n_grid: usize,
) -> Result<GridProblem> {
    let (a, b) = match domain {
        Domain::Interval { a, b } => (*a, *b),
        Domain::Ball { .. } => return Err(Error::Domain("the grid solver needs an interval".into())),
    };
    if coeffs.dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: coeffs.dim(),
        });
    }
    if n_grid < 3 {
        return Err(Error::Argument(format!("need at least 3 grid nodes, got {n_grid}")));
    }
    let dx = (b - a) / (n_grid - 1) as f64;
    let x: Vec<f64> = (0..n_grid).map(|i| if i == n_grid - 1 { b } else { a + i as f64 * dx }).collect();
    let mut sigma = Vec::with_capacity(n_grid);
    let mut drift = Vec::with_capacity(n_grid);
    let (mut s, mut d) = ([0.0], [0.0]);
    for &xi in &x {
        coeffs.diffusion(&[xi], &mut s);
        coeffs.drift(&[xi], &mut d);
        sigma.push(s[0]);
        drift.push(d[0]);
    }
    for (i, (&s, &d)) in sigma.iter().zip(&drift).enumerate() {
        let coupling = 0.5 * s * s / (dx * dx) + d.abs() / dx;
        if !(coupling > 1e-14) {
            return Err(Error::Ellipticity(format!(
                "node {i} (x = {}) has neither diffusion nor drift",
                x[i]
            )));
        }
    }
    let h = x.iter().map(|&xi| obstacle.h(&[xi])).collect();
    Ok(GridProblem {
        a,
        b,
        dx,
        x,
        sigma,
        drift,
        h,
        driver: driver.clone(),
    })
}

impl GridProblem {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Central second difference and upwinded drift at node `i`.
    pub fn stencil(&self, i: usize) -> Stencil {
        let diff = 0.5 * self.sigma[i] * self.sigma[i] / (self.dx * self.dx);
        let bp = self.drift[i].max(0.0) / self.dx;
        let bm = (-self.drift[i]).max(0.0) / self.dx;
        Stencil {
            lower: diff + bm,
            diag: -2.0 * diff - bp - bm,
            upper: diff + bp,
        }
    }

    /// Off-diagonals nonnegative and `|diag| >= lower + upper` on every row.
    pub fn is_monotone(&self) -> bool {
        (0..self.n()).all(|i| {
            let s = self.stencil(i);
            s.lower >= 0.0 && s.upper >= 0.0 && s.diag.abs() >= (s.lower + s.upper) * (1.0 - 1e-12)
        })
    }

    /// Neighbour values at node `i` with `v` in place of `u_i`; ghosts carry the Neumann data.
    fn neighbours(&self, u: &[f64], i: usize, v: f64) -> (f64, f64) {
        let n = self.n();
        if i == 0 {
            let g = self.driver.g(0.0, &[self.a], v);
            (u[1] + 2.0 * self.dx * g, u[1])
        } else if i == n - 1 {
            let g = self.driver.g(0.0, &[self.b], v);
            (u[n - 2], u[n - 2] + 2.0 * self.dx * g)
        } else {
            (u[i - 1], u[i + 1])
        }
    }

    /// `(L_h u)_i + f(x_i, v, (u' sigma)_i)` with `v` in place of `u_i`.
    pub fn node_residual(&self, u: &[f64], i: usize, v: f64) -> f64 {
        let (lo, up) = self.neighbours(u, i, v);
        let s = self.stencil(i);
        let lu = s.lower * lo + s.diag * v + s.upper * up;
        let z = (up - lo) / (2.0 * self.dx) * self.sigma[i];
        lu + self.driver.f(0.0, &[self.x[i]], v, &[z])
    }

    /// `min(u_i - h_i, -(L_h u + f)_i)` per node.
    pub fn complementarity(&self, u: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|i| (u[i] - self.h[i]).min(-self.node_residual(u, i, u[i])))
            .collect()
    }

    /// Scalar Newton for `node_residual(v) = 0`, derivative by central differences.
    fn solve_node(&self, u: &[f64], i: usize) -> Result<f64> {
        let mut v = u[i];
        for _ in 0..60 {
            let r = self.node_residual(u, i, v);
            if !r.is_finite() {
                break;
            }
            let eps = 1e-6 * (1.0 + v.abs());
            let dr = (self.node_residual(u, i, v + eps) - self.node_residual(u, i, v - eps)) / (2.0 * eps);
            if !(dr < 0.0) {
                return Err(Error::NodeSolve {
                    node: i,
                    reason: format!("residual not decreasing in u (slope {dr:e})"),
                });
            }
            let step = r / dr;
            v -= step;
            if step.abs() <= 1e-14 * (1.0 + v.abs()) {
                return Ok(v);
            }
        }
        let r = self.node_residual(u, i, v);
        if r.is_finite() && r.abs() <= 1e-9 * (1.0 + v.abs()) {
            return Ok(v);
        }
        Err(Error::NodeSolve {
            node: i,
            reason: format!("Newton did not converge (residual {r:e})"),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOrder {
    Lexicographic,
    /// Even nodes, then odd nodes.
    RedBlack,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSolveConfig {
    /// Bound on both the last sweep's update and the complementarity residual.
    pub tol: f64,
    pub max_iters: usize,
    /// Relaxation factor; `None` picks `2 / (1 + sin(pi dx / (b - a)))`.
    pub omega: Option<f64>,
    pub order: SweepOrder,
}

impl Default for GridSolveConfig {
    fn default() -> Self {
        GridSolveConfig {
            tol: 1e-10,
            max_iters: 200_000,
            omega: None,
            order: SweepOrder::Lexicographic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeSolution {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// `min(u - h, -(L_h u + f))` per node.
    pub residual: Vec<f64>,
    /// `u_i <= h_i + 1e-9`.
    pub active: Vec<bool>,
    /// One-sided second-order estimates of `du/dn + g` at `a` and `b`.
    pub neumann_residual: [f64; 2],
    pub iterations: usize,
    /// `max_i |complementarity|`.
    pub max_residual: f64,
}

impl PdeSolution {
    /// Writes `x,u,residual,active`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,u,residual,active")?;
        for i in 0..self.x.len() {
            writeln!(w, "{},{},{},{}", self.x[i], self.u[i], self.residual[i], u8::from(self.active[i]))?;
        }
        Ok(())
    }

    /// Linear interpolation; the flag reports whether `x` was off the grid.
    pub fn value_at(&self, x: f64) -> (f64, bool) {
        let n = self.x.len();
        let dx = self.x[1] - self.x[0];
        let s = ((x - self.x[0]) / dx).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        let w = s - i as f64;
        let on_grid = (x - self.x[i]).abs() <= 1e-9 * dx || (x - self.x[i + 1]).abs() <= 1e-9 * dx;
        if (x - self.x[i + 1]).abs() <= 1e-9 * dx {
            return (self.u[i + 1], false);
        }
        if on_grid {
            return (self.u[i], false);
        }
        ((1.0 - w) * self.u[i] + w * self.u[i + 1], true)
    }
}

/// Projected nonlinear Gauss–Seidel from `u = max(h, 0)`.
pub fn solve_obstacle(prob: &GridProblem, cfg: &GridSolveConfig) -> Result<PdeSolution> {
    let n = prob.n();
    let omega = cfg
        .omega
        .unwrap_or_else(|| 2.0 / (1.0 + (std::f64::consts::PI * prob.dx / (prob.b - prob.a)).sin()));
    if !(omega > 0.0 && omega < 2.0) {
        return Err(Error::Argument(format!("relaxation factor {omega} outside (0, 2)")));
    }
    let order: Vec<usize> = match cfg.order {
        SweepOrder::Lexicographic => (0..n).collect(),
        SweepOrder::RedBlack => (0..n).step_by(2).chain((1..n).step_by(2)).collect(),
    };
    let mut u: Vec<f64> = prob.h.iter().map(|&h| h.max(0.0)).collect();
    // Residuals below this are rounding in the stencil products.
    let diag_max = (0..n).map(|i| prob.stencil(i).diag.abs()).fold(0.0f64, f64::max);
    let mut trace = Vec::new();
    let mut last = f64::NAN;
    for it in 1..=cfg.max_iters {
        let mut max_update: f64 = 0.0;
        for &i in &order {
            let v = prob.solve_node(&u, i)?;
            let relaxed = (u[i] + omega * (v - u[i])).max(prob.h[i]);
            max_update = max_update.max((relaxed - u[i]).abs());
            u[i] = relaxed;
        }
        if !max_update.is_finite() {
            return Err(Error::NonConvergence {
                iterations: it,
                last_residual: max_update,
                trace,
            });
        }
        let residual = prob.complementarity(&u).iter().fold(0.0f64, |m, r| m.max(r.abs()));
        last = residual;
        if it % 100 == 0 || trace.len() < 10 {
            trace.push(residual);
        }
        let floor = 16.0 * f64::EPSILON * diag_max * u.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if max_update < cfg.tol && residual <= cfg.tol + floor {
            return Ok(finish(prob, u, it));
        }
    }
    Err(Error::NonConvergence {
        iterations: cfg.max_iters,
        last_residual: last,
        trace,
    })
}

fn finish(prob: &GridProblem, u: Vec<f64>, iterations: usize) -> PdeSolution {
    let n = prob.n();
    let residual = prob.complementarity(&u);
    let max_residual = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let active = (0..n).map(|i| u[i] <= prob.h[i] + 1e-9).collect();
    let dx = prob.dx;
    let da = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * dx);
    let db = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * dx);
    let neumann_residual = [
        da + prob.driver.g(0.0, &[prob.a], u[0]),
        -db + prob.driver.g(0.0, &[prob.b], u[n - 1]),
    ];
    PdeSolution {
        x: prob.x.clone(),
        u,
        residual,
        active,
        neumann_residual,
        iterations,
        max_residual,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViscosityReport {
    pub per_node: Vec<f64>,
    pub max_abs: f64,
    pub worst_node: usize,
}

/// Node-wise `min(u - h, -(L_h u + f))`; at the end nodes the ghost closure
/// makes `-du/dn - g` vanish identically, so it adds nothing to the minimum.
pub fn viscosity_residual(u: &[f64], prob: &GridProblem) -> Result<ViscosityReport> {
    if u.len() != prob.n() {
        return Err(Error::Dimension {
            expected: prob.n(),
            got: u.len(),
        });
    }
    let per_node = prob.complementarity(u);
    let (worst_node, max_abs) = per_node
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(j, m), (i, r)| if r.abs() > m { (i, r.abs()) } else { (j, m) });
    Ok(ViscosityReport {
        per_node,
        max_abs,
        worst_node,
    })
}

/// Probabilistic value at one point with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub x: f64,
    pub y0: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub x: f64,
    pub u_fd: f64,
    pub y0_mc: f64,
    pub stderr: f64,
    pub gap: f64,
    pub bound: f64,
    pub flag: bool,
    pub interpolated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn flags(&self) -> usize {
        self.rows.iter().filter(|r| r.flag).count()
    }

    pub fn max_gap(&self) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max(r.gap))
    }

    /// Writes `x,u_fd,y0_mc,stderr,gap,flag`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,u_fd,y0_mc,stderr,gap,flag")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{},{}", r.x, r.u_fd, r.y0_mc, r.stderr, r.gap, u8::from(r.flag))?;
        }
        Ok(())
    }
}

/// `|u(x_j) - Y_0^{x_j}|` against `3 stderr_j + c_disc (dx^2 + dt^{1/2})`.
pub fn compare_probabilistic(
    prob: &GridProblem,
    sol: &PdeSolution,
    probes: &[ProbePoint],
    c_disc: f64,
    dt: f64,
) -> ComparisonTable {
    let disc = c_disc * (prob.dx * prob.dx + dt.sqrt());
    let rows = probes
        .iter()
        .map(|p| {
            let (u_fd, interpolated) = sol.value_at(p.x);
            let gap = (u_fd - p.y0).abs();
            let bound = 3.0 * p.stderr + disc;
            ComparisonRow {
                x: p.x,
                u_fd,
                y0_mc: p.y0,
                stderr: p.stderr,
                gap,
                bound,
                flag: !(gap <= bound),
                interpolated,
            }
        })
        .collect();
    ComparisonTable { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{builtin_driver, builtin_obstacle, Params, TerminalRule};
    use std::sync::Arc;

    fn unit() -> Domain {
        Domain::interval(0.0, 1.0).unwrap()
    }

    fn manufactured(n: usize) -> (GridProblem, GridSolveConfig) {
        let mut p = Params::new();
        p.insert("sigma".into(), 1.0);
        p.insert("drift".into(), 0.0);
        let d = builtin_driver("manufactured-pde", &p).unwrap();
        let o = ObstacleSpec::sentinel(0.0);
        let prob = assemble(&unit(), &CoefficientSet::constant(vec![0.0], 1.0), &d, &o, n).unwrap();
        (prob, GridSolveConfig::default())
    }

    #[test]
    fn textbook_stencil() {
        let (prob, _) = manufactured(3);
        let s = prob.stencil(1);
        let c = 1.0 / (2.0 * 0.25);
        assert!((s.lower - c).abs() < 1e-15 && (s.upper - c).abs() < 1e-15 && (s.diag + 2.0 * c).abs() < 1e-15);
        assert!(prob.is_monotone());
    }

    #[test]
    fn zero_flux_closure_is_symmetric() {
        let d = DriverSpec::new("r", Arc::new(|_, _, y, _| -y), Arc::new(|_, _, _| 0.0));
        let prob = assemble(&unit(), &CoefficientSet::constant(vec![0.0], 1.0), &d, &ObstacleSpec::sentinel(0.0), 5).unwrap();
        // Ghost u_{-1} = u_1: a profile even about a has zero boundary residual contribution.
        let u = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (lo, up) = prob.neighbours(&u, 0, u[0]);
        assert_eq!(lo, up);
    }

    #[test]
    fn degenerate_noise_without_drift_is_rejected() {
        let e = assemble(&unit(), &CoefficientSet::constant(vec![0.0], 0.0), &DriverSpec::zero(), &ObstacleSpec::sentinel(0.0), 11);
        assert!(matches!(e, Err(Error::Ellipticity(_))));
        assert!(assemble(&unit(), &CoefficientSet::constant(vec![1.0], 0.0), &DriverSpec::zero(), &ObstacleSpec::sentinel(0.0), 11).is_ok());
    }

    #[test]
    fn constant_solution() {
        let c = 0.7;
        let d = DriverSpec::new("c-u", Arc::new(move |_, _, y, _| c - y), Arc::new(|_, _, _| 0.0));
        let o = ObstacleSpec::constant(c, TerminalRule::ObstacleAtStop);
        let prob = assemble(&unit(), &CoefficientSet::constant(vec![0.0], 1.0), &d, &o, 21).unwrap();
        let s = solve_obstacle(&prob, &GridSolveConfig::default()).unwrap();
        assert!(s.u.iter().all(|&u| (u - c).abs() < 1e-12));
        assert!(s.max_residual < 1e-12);
    }

    #[test]
    fn manufactured_square_and_refinement() {
        let (prob, cfg) = manufactured(101);
        let s = solve_obstacle(&prob, &cfg).unwrap();
        let err = s.u.iter().zip(&s.x).map(|(u, x)| (u - x * x).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-3, "error {err}");
        let v = viscosity_residual(&s.u, &prob).unwrap();
        assert!(v.max_abs <= 10.0 * cfg.tol, "residual {}", v.max_abs);
        let mut bumped = s.u.clone();
        bumped[50] += 0.1;
        assert!(viscosity_residual(&bumped, &prob).unwrap().max_abs > 0.01);
    }

    #[test]
    fn second_order_on_smooth_solution() {
        // u* = cos(x): f = -Lu* - (u - u*), g from du*/dn.
        let d = DriverSpec::new(
            "cos",
            Arc::new(|_, x, y, _| 0.5 * x[0].cos() - (y - x[0].cos())),
            Arc::new(|_, x, y| {
                let n = if x[0] < 0.5 { 1.0 } else { -1.0 };
                n * x[0].sin() - (y - x[0].cos())
            }),
        );
        let err = |n: usize| {
            let prob = assemble(&unit(), &CoefficientSet::constant(vec![0.0], 1.0), &d, &ObstacleSpec::sentinel(0.0), n).unwrap();
            let s = solve_obstacle(&prob, &GridSolveConfig::default()).unwrap();
            s.u.iter().zip(&s.x).map(|(u, x)| (u - x.cos()).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(21), err(41));
        assert!(e1 / e2 >= 3.0, "{e1} vs {e2}");
    }

    #[test]
    fn active_obstacle_and_comparison() {
        let d = DriverSpec::new("decay", Arc::new(|_, _, y, _| -y), Arc::new(|_, _, y| -y));
        let o = ObstacleSpec::constant(1.0, TerminalRule::ObstacleAtStop);
        let prob = assemble(&unit(), &CoefficientSet::constant(vec![0.0], 1.0), &d, &o, 51).unwrap();
        let s = solve_obstacle(&prob, &GridSolveConfig::default()).unwrap();
        assert!(s.u.iter().all(|&u| u >= 1.0 - 1e-9));
        assert!(s.active.iter().all(|&a| a));
        assert!(s.max_residual <= 1e-10);
        let higher = ObstacleSpec::new("h", Arc::new(|x: &[f64]| 1.0 + 0.2 * x[0]), TerminalRule::ObstacleAtStop);
        let p2 = assemble(&unit(), &CoefficientSet::constant(vec![0.0], 1.0), &d, &higher, 51).unwrap();
        let s2 = solve_obstacle(&p2, &GridSolveConfig::default()).unwrap();
        assert!(s.u.iter().zip(&s2.u).all(|(a, b)| b >= a));
    }

    #[test]
    fn red_black_agrees() {
        let (prob, cfg) = manufactured(41);
        let a = solve_obstacle(&prob, &cfg).unwrap();
        let b = solve_obstacle(&prob, &GridSolveConfig { order: SweepOrder::RedBlack, ..cfg }).unwrap();
        for (x, y) in a.u.iter().zip(&b.u) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn iteration_cap_reports_trace() {
        let (prob, _) = manufactured(41);
        let e = solve_obstacle(&prob, &GridSolveConfig { max_iters: 3, omega: Some(1.0), ..Default::default() });
        match e {
            Err(Error::NonConvergence { iterations, trace, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(trace.len(), 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn comparison_flags_wrong_values() {
        let (prob, cfg) = manufactured(41);
        let s = solve_obstacle(&prob, &cfg).unwrap();
        let good: Vec<ProbePoint> = [0.25, 0.5, 0.75].iter().map(|&x| ProbePoint { x, y0: x * x, stderr: 1e-3 }).collect();
        assert_eq!(compare_probabilistic(&prob, &s, &good, 1.0, 1e-4).flags(), 0);
        let bad: Vec<ProbePoint> = good.iter().map(|p| ProbePoint { y0: p.y0 + 0.5, ..*p }).collect();
        assert_eq!(compare_probabilistic(&prob, &s, &bad, 1.0, 1e-4).flags(), 3);
        let off = compare_probabilistic(&prob, &s, &[ProbePoint { x: 0.51, y0: 0.26, stderr: 0.01 }], 1.0, 1e-4);
        assert!(off.rows[0].interpolated);
        let _ = builtin_obstacle;
    }
}
