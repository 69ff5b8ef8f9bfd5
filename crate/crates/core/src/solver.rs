//! Backward solver for reflected equations with boundary local time
//!
//! `Y_t = xi + int_t^tau f(s, X, Y, Z) ds + int_t^tau g(s, X, Y) dG_s - int_t^tau Z dW + K_tau - K_t`,
//! `Y >= h(X)`, `int (Y - h(X)) dK = 0`,
//!
//! on two kinds of carrier: simulated path bundles, where conditional
//! expectations are regressions on `X_k`, and finite lattices viewed as weighted
//! root-to-leaf paths, where they are exact node averages.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drivers::{contraction_constant, DriverSpec, HittingRule, ObstacleSpec, WeightSet};
use crate::error::{Error, Result};
use crate::regression::{self, Design, RegressionConfig};
use crate::sde::{hitting_index, simulate_paths, CoefficientSet, PathBundle, TimeGrid};
use crate::snell::{Lattice, LatticePath};
use crate::Domain;

/// Quadrature of `f` over one step, with the state and `(y, z)` held fixed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeRule {
    /// `f(t_k, ...) dt`.
    LeftPoint,
    /// Gauss–Legendre with 1 to 4 nodes in time.
    GaussLegendre { nodes: usize },
}

/// Where `g dG_k` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryRule {
    /// `g(t_k, X_k, y) dG_k`, inside the fixed point in `y`.
    Implicit,
    /// `g(t_{k+1}, pi(X_{k+1}), Y_{k+1}) dG_k` inside the conditional expectation,
    /// with `pi` the nearest boundary point: the increment is generated at the contact.
    Contact,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(default)]
    pub regression: RegressionConfig,
    #[serde(default = "default_time_rule")]
    pub time_rule: TimeRule,
    #[serde(default = "default_boundary_rule")]
    pub boundary: BoundaryRule,
    #[serde(default = "default_rounds")]
    pub fixed_point_rounds: usize,
    #[serde(default = "default_fp_tol")]
    pub fixed_point_tol: f64,
    /// Bound on `dG/dt` used in the step-size check.
    #[serde(default = "default_rate")]
    pub local_time_rate: f64,
    /// With `false` the recursion skips the projection on the obstacle.
    #[serde(default = "default_true")]
    pub reflect: bool,
}

fn default_time_rule() -> TimeRule {
    TimeRule::LeftPoint
}
fn default_boundary_rule() -> BoundaryRule {
    BoundaryRule::Implicit
}
fn default_rounds() -> usize {
    5
}
fn default_fp_tol() -> f64 {
    1e-10
}
fn default_rate() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            regression: RegressionConfig::default(),
            time_rule: default_time_rule(),
            boundary: default_boundary_rule(),
            fixed_point_rounds: default_rounds(),
            fixed_point_tol: default_fp_tol(),
            local_time_rate: default_rate(),
            reflect: true,
        }
    }
}

impl SolverConfig {
    pub fn with_regression(mut self, regression: RegressionConfig) -> Self {
        self.regression = regression;
        self
    }

    pub fn with_time_rule(mut self, rule: TimeRule) -> Self {
        self.time_rule = rule;
        self
    }

    pub fn with_boundary(mut self, rule: BoundaryRule) -> Self {
        self.boundary = rule;
        self
    }

    pub fn unreflected(mut self) -> Self {
        self.reflect = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.regression.validate()?;
        if let TimeRule::GaussLegendre { nodes } = self.time_rule {
            if !(1..=4).contains(&nodes) {
                return Err(Error::Argument(format!("Gauss-Legendre needs 1..=4 nodes, got {nodes}")));
            }
        }
        if self.fixed_point_rounds == 0 {
            return Err(Error::Argument("need at least one fixed-point round".into()));
        }
        Ok(())
    }
}

fn gauss_legendre(n: usize) -> &'static [(f64, f64)] {
    // (node in [0, 1], weight) pairs.
    const G1: [(f64, f64); 1] = [(0.5, 1.0)];
    const G2: [(f64, f64); 2] = [(0.211_324_865_405_187_1, 0.5), (0.788_675_134_594_812_9, 0.5)];
    const G3: [(f64, f64); 3] = [
        (0.112_701_665_379_258_3, 5.0 / 18.0),
        (0.5, 8.0 / 18.0),
        (0.887_298_334_620_741_7, 5.0 / 18.0),
    ];
    const G4: [(f64, f64); 4] = [
        (0.069_431_844_202_973_7, 0.173_927_422_568_726_9),
        (0.330_009_478_207_571_9, 0.326_072_577_431_273_1),
        (0.669_990_521_792_428_1, 0.326_072_577_431_273_1),
        (0.930_568_155_797_026_3, 0.173_927_422_568_726_9),
    ];
    match n {
        1 => &G1,
        2 => &G2,
        3 => &G3,
        _ => &G4,
    }
}

/// A lattice viewed as weighted root-to-leaf paths. `dW` on the tree is the
/// centred state increment `X_{k+1} - E[X_{k+1} | node_k]`.
#[derive(Clone, Debug)]
pub struct TreeCarrier {
    lattice: Lattice,
    paths: Vec<LatticePath>,
    dim: usize,
    dw: Vec<f64>,
}

impl TreeCarrier {
    pub fn new(lattice: Lattice) -> Result<Self> {
        let dim = lattice.node(0).state.len();
        if let Some(n) = lattice.nodes().iter().find(|n| n.state.len() != dim) {
            return Err(Error::Structure(format!("node {} has state dimension {}", n.id, n.state.len())));
        }
        let paths = lattice.paths();
        let steps = lattice.levels();
        let mut dw = vec![0.0; paths.len() * steps * dim];
        for (p, path) in paths.iter().enumerate() {
            for k in 0..steps {
                let (a, b) = (path.nodes[k], path.nodes[k + 1]);
                for j in 0..dim {
                    let mean: f64 = lattice
                        .node(a)
                        .children
                        .iter()
                        .map(|c| c.p * lattice.node(c.id).state[j])
                        .sum();
                    dw[(p * steps + k) * dim + j] = lattice.node(b).state[j] - mean;
                }
            }
        }
        Ok(TreeCarrier {
            lattice,
            paths,
            dim,
            dw,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn paths(&self) -> &[LatticePath] {
        &self.paths
    }

    pub fn node(&self, p: usize, k: usize) -> usize {
        self.paths[p].nodes[k]
    }
}

/// Where the backward recursion runs.
#[derive(Clone, Copy, Debug)]
pub enum Carrier<'a> {
    Paths(&'a PathBundle),
    Tree(&'a TreeCarrier),
}

impl<'a> Carrier<'a> {
    pub fn n_paths(&self) -> usize {
        match self {
            Carrier::Paths(b) => b.n_paths,
            Carrier::Tree(t) => t.paths.len(),
        }
    }

    pub fn n_steps(&self) -> usize {
        match self {
            Carrier::Paths(b) => b.n_steps(),
            Carrier::Tree(t) => t.lattice.levels(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Carrier::Paths(b) => b.dim,
            Carrier::Tree(t) => t.dim,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Carrier::Tree(_))
    }

    pub fn weight(&self, p: usize) -> f64 {
        match self {
            Carrier::Paths(b) => 1.0 / b.n_paths as f64,
            Carrier::Tree(t) => t.paths[p].weight,
        }
    }

    pub fn time(&self, p: usize, k: usize) -> f64 {
        match self {
            Carrier::Paths(b) => b.grid.time(k),
            Carrier::Tree(t) => t.lattice.time(t.node(p, k)),
        }
    }

    pub fn dt(&self, p: usize, k: usize) -> f64 {
        match self {
            Carrier::Paths(b) => b.grid.dt,
            Carrier::Tree(t) => t.lattice.node(t.node(p, k)).dt,
        }
    }

    pub fn state(&self, p: usize, k: usize) -> &'a [f64] {
        match self {
            Carrier::Paths(b) => b.state(p, k),
            Carrier::Tree(t) => &t.lattice.node(t.node(p, k)).state,
        }
    }

    pub fn dg(&self, p: usize, k: usize) -> f64 {
        match self {
            Carrier::Paths(b) => b.dg(p, k),
            Carrier::Tree(t) => t.lattice.node(t.node(p, k)).dg,
        }
    }

    pub fn dw(&self, p: usize, k: usize) -> &'a [f64] {
        match self {
            Carrier::Paths(b) => b.dw(p, k),
            Carrier::Tree(t) => {
                let base = (p * t.lattice.levels() + k) * t.dim;
                &t.dw[base..base + t.dim]
            }
        }
    }

    /// Point at which boundary data is read for the increment ending at `k`.
    pub(crate) fn contact_point(&self, p: usize, k: usize) -> Vec<f64> {
        let x = self.state(p, k);
        match self {
            Carrier::Paths(b) => b.domain.nearest_boundary_point(x).unwrap_or_else(|_| x.to_vec()),
            Carrier::Tree(_) => x.to_vec(),
        }
    }

    fn axis(&self) -> TimeAxis {
        match self {
            Carrier::Paths(b) => TimeAxis::Uniform(b.grid),
            Carrier::Tree(_) => {
                let n = self.n_steps();
                TimeAxis::PerPath(
                    (0..self.n_paths())
                        .flat_map(|p| (0..=n).map(move |k| (p, k)))
                        .map(|(p, k)| self.time(p, k))
                        .collect(),
                )
            }
        }
    }

    /// Time of level `k` when it is the same on every path.
    pub fn level_time(&self, k: usize) -> Result<f64> {
        let t = self.time(0, k);
        for p in 1..self.n_paths() {
            if (self.time(p, k) - t).abs() > 1e-12 {
                return Err(Error::Structure(format!("level {k} has path-dependent times")));
            }
        }
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum TimeAxis {
    Uniform(TimeGrid),
    PerPath(Vec<f64>),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub skorokhod_residual: f64,
    pub estimate_ratio: Option<f64>,
    pub picard_trace: Vec<f64>,
    pub picard_ratios: Vec<f64>,
    pub picard_converged: Option<bool>,
    pub t0: Option<f64>,
    pub contraction_constant: Option<f64>,
    pub y0: f64,
    pub y0_stderr: f64,
    /// `min (Y - h(X))` over nodes before the stop index.
    pub min_dominance_gap: f64,
    pub warnings: Vec<String>,
}

/// Per-path `(Y, Z, K)` on the grid. Arrays are step-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SolutionBundle {
    pub n_paths: usize,
    pub n_steps: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    axis: TimeAxis,
    y: Vec<f64>,
    z: Vec<f64>,
    k: Vec<f64>,
    h: Vec<f64>,
    stop: Vec<usize>,
    /// Pathwise `xi + sum (f dt + g dG + dK)`, whose mean is `Y_0`.
    pathwise: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl SolutionBundle {
    fn idx(&self, p: usize, k: usize) -> usize {
        k * self.n_paths + p
    }

    pub fn time(&self, p: usize, k: usize) -> f64 {
        match &self.axis {
            TimeAxis::Uniform(g) => g.time(k),
            TimeAxis::PerPath(t) => t[p * (self.n_steps + 1) + k],
        }
    }

    pub fn y(&self, p: usize, k: usize) -> f64 {
        self.y[self.idx(p, k)]
    }

    /// `Z_k` for `k < n_steps`.
    pub fn z(&self, p: usize, k: usize) -> &[f64] {
        let base = (k * self.n_paths + p) * self.dim;
        &self.z[base..base + self.dim]
    }

    /// Cumulative `K_k`, `K_0 = 0`.
    pub fn k(&self, p: usize, k: usize) -> f64 {
        self.k[self.idx(p, k)]
    }

    /// `K_{k+1} - K_k`.
    pub fn delta_k(&self, p: usize, k: usize) -> f64 {
        self.k(p, k + 1) - self.k(p, k)
    }

    /// Obstacle value `h(X_k)` used by the solver.
    pub fn h(&self, p: usize, k: usize) -> f64 {
        self.h[self.idx(p, k)]
    }

    /// Discretized `tau` (equal to `n_steps` when the horizon is deterministic).
    pub fn stop_index(&self, p: usize) -> usize {
        self.stop[p]
    }

    pub fn stopped(&self, p: usize, k: usize) -> bool {
        k >= self.stop[p]
    }

    pub fn y0(&self) -> f64 {
        self.diagnostics.y0
    }

    pub fn y0_stderr(&self) -> f64 {
        self.diagnostics.y0_stderr
    }

    pub fn pathwise(&self) -> &[f64] {
        &self.pathwise
    }

    /// Writes `path,k,t,Y,Z_1..Z_d,K,stopped`; `Z` at the last index is written as 0.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> std::io::Result<()> {
        self.write_csv_paths(w, self.n_paths)
    }

    /// As [`SolutionBundle::write_csv`], restricted to the first `max_paths` paths.
    pub fn write_csv_paths<W: std::io::Write>(&self, mut w: W, max_paths: usize) -> std::io::Result<()> {
        let mut header = String::from("path,k,t,Y");
        for i in 1..=self.dim {
            header.push_str(&format!(",Z_{i}"));
        }
        header.push_str(",K,stopped");
        writeln!(w, "{header}")?;
        for p in 0..self.n_paths.min(max_paths) {
            for k in 0..=self.n_steps {
                let mut line = format!("{p},{k},{},{}", self.time(p, k), self.y(p, k));
                for j in 0..self.dim {
                    let z = if k < self.n_steps { self.z(p, k)[j] } else { 0.0 };
                    line.push_str(&format!(",{z}"));
                }
                line.push_str(&format!(",{},{}", self.k(p, k), u8::from(self.stopped(p, k))));
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn diagnostics_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.diagnostics)?)
    }
}

/// Driver values used inside the recursion.
#[derive(Clone, Copy)]
enum DriverEval<'a> {
    Full(&'a DriverSpec),
    /// Step-major values of the effective `f` and of `g`.
    Frozen { f: &'a [f64], g: &'a [f64] },
}

struct Raw {
    y: Vec<f64>,
    z: Vec<f64>,
    dk: Vec<f64>,
    h: Vec<f64>,
    /// `sum (f dt + g dG + dK)` over the solved steps.
    increments: Vec<f64>,
}

pub(crate) fn effective_f(
    driver: &DriverSpec,
    rule: TimeRule,
    t: f64,
    dt: f64,
    x: &[f64],
    y: f64,
    z: &[f64],
) -> f64 {
    match rule {
        TimeRule::LeftPoint => driver.f(t, x, y, z),
        TimeRule::GaussLegendre { nodes } => gauss_legendre(nodes)
            .iter()
            .map(|(c, w)| w * driver.f(t + c * dt, x, y, z))
            .sum(),
    }
}

fn check_step_size(carrier: &Carrier<'_>, driver: &DriverSpec, cfg: &SolverConfig, steps: usize) -> Result<()> {
    if !driver.depends_on_y {
        return Ok(());
    }
    let denom = 2.0 * (driver.alpha.abs() + driver.beta.abs() * cfg.local_time_rate);
    if denom <= 0.0 {
        return Ok(());
    }
    let bound = 1.0 / denom;
    for p in 0..carrier.n_paths() {
        for k in 0..steps {
            let dt = carrier.dt(p, k);
            if dt > bound {
                return Err(Error::DriverStiffness {
                    step: k,
                    reason: format!("dt = {dt} exceeds 1/(2(|alpha| + |beta| rate)) = {bound}"),
                });
            }
        }
    }
    Ok(())
}

/// Backward recursion over steps `k_lo..n` where `n = carrier steps used`.
/// Path `p` is active at `k` when `k_lo <= k < end[p]`; `Y_{end[p]} = terminal[p]`.
#[allow(clippy::too_many_arguments)]
fn backward(
    carrier: &Carrier<'_>,
    n: usize,
    k_lo: usize,
    end: &[usize],
    terminal: &[f64],
    driver: DriverEval<'_>,
    obstacle: &ObstacleSpec,
    cfg: &SolverConfig,
) -> Result<Raw> {
    let np = carrier.n_paths();
    let d = carrier.dim();
    let stride = n + 1;
    let mut raw = Raw {
        y: vec![0.0; np * stride],
        z: vec![0.0; np * n * d],
        dk: vec![0.0; np * stride],
        h: vec![0.0; np * stride],
        increments: vec![0.0; np],
    };
    for p in 0..np {
        for k in k_lo..=n {
            raw.h[k * np + p] = obstacle.h(carrier.state(p, k));
        }
        for k in end[p]..=n {
            raw.y[k * np + p] = terminal[p];
        }
    }
    let exact = carrier.is_exact();
    let mut fitted: Vec<Vec<f64>> = Vec::new();
    for k in (k_lo..n).rev() {
        let act: Vec<usize> = (0..np).filter(|&p| k < end[p]).collect();
        if act.is_empty() {
            continue;
        }
        // Targets: [Y_{k+1} (+ contact g dG), Y_{k+1} dW_j.., (tree) dW_j^2..].
        let n_targets = 1 + d + if exact { d } else { 0 };
        let mut targets = vec![vec![0.0; act.len()]; n_targets];
        let mut contact = vec![0.0; act.len()];
        for (i, &p) in act.iter().enumerate() {
            let y1 = raw.y[(k + 1) * np + p];
            let dg = carrier.dg(p, k);
            if cfg.boundary == BoundaryRule::Contact && dg > 0.0 {
                let gv = match driver {
                    DriverEval::Full(drv) => {
                        drv.g(carrier.time(p, k + 1), &carrier.contact_point(p, k + 1), y1)
                    }
                    DriverEval::Frozen { g, .. } => g[k * np + p],
                };
                contact[i] = gv * dg;
            }
            targets[0][i] = y1 + contact[i];
            let dw = carrier.dw(p, k);
            for j in 0..d {
                targets[1 + j][i] = y1 * dw[j];
                if exact {
                    targets[1 + d + j][i] = dw[j] * dw[j];
                }
            }
        }
        fitted.resize(n_targets, Vec::new());
        conditional_expectation(carrier, k, &act, &targets, &mut fitted, &cfg.regression)?;

        let mut zbuf = vec![0.0; act.len() * d];
        let mut updates = vec![(0.0, 0.0, 0.0); act.len()];
        updates
            .par_iter_mut()
            .zip(zbuf.par_chunks_mut(d))
            .enumerate()
            .with_min_len(512)
            .try_for_each(|(i, (slot, z))| -> Result<()> {
                let p = act[i];
                let dt = carrier.dt(p, k);
                let dg = carrier.dg(p, k);
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj = if exact {
                        let den = fitted[1 + d + j][i];
                        if den > 1e-300 {
                            fitted[1 + j][i] / den
                        } else {
                            0.0
                        }
                    } else if dt > 0.0 {
                        fitted[1 + j][i] / dt
                    } else {
                        0.0
                    };
                }
                let z = &*z;
                let c = fitted[0][i];
                let x = carrier.state(p, k);
                let t = carrier.time(p, k);
                let implicit = cfg.boundary == BoundaryRule::Implicit;
                let (ytilde, incr) = match driver {
                    DriverEval::Frozen { f, g } => {
                        let fg = f[k * np + p] * dt + if implicit { g[k * np + p] * dg } else { 0.0 };
                        (c + fg, fg)
                    }
                    DriverEval::Full(drv) => {
                        let step = |y: f64| -> f64 {
                            let mut v = effective_f(drv, cfg.time_rule, t, dt, x, y, &z) * dt;
                            if implicit && dg > 0.0 {
                                v += drv.g(t, x, y) * dg;
                            }
                            v
                        };
                        if drv.depends_on_y {
                            // Picard first, then secant steps on r(y) = c + F(y) - y.
                            let mut prev: Option<(f64, f64)> = None;
                            let mut y = c;
                            let mut converged = false;
                            let mut last = 0.0;
                            for _ in 0..cfg.fixed_point_rounds {
                                let r = c + step(y) - y;
                                let next = match prev {
                                    Some((yp, rp)) if r != rp && (y - yp) != 0.0 => {
                                        let s = y - r * (y - yp) / (r - rp);
                                        if s.is_finite() { s } else { y + r }
                                    }
                                    _ => y + r,
                                };
                                prev = Some((y, r));
                                last = (next - y).abs();
                                y = next;
                                if last <= cfg.fixed_point_tol * y.abs().max(1.0) {
                                    converged = true;
                                    break;
                                }
                            }
                            if !converged {
                                return Err(Error::DriverStiffness {
                                    step: k,
                                    reason: format!(
                                        "fixed point did not settle in {} rounds (last change {last:e})",
                                        cfg.fixed_point_rounds
                                    ),
                                });
                            }
                            (y, y - c)
                        } else {
                            let v = step(c);
                            (c + v, v)
                        }
                    }
                };
                if !ytilde.is_finite() || z.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        what: format!("solution on path {p}"),
                        step: k,
                    });
                }
                let h = raw.h[k * np + p];
                let y = if cfg.reflect { ytilde.max(h) } else { ytilde };
                let dk = y - ytilde;
                *slot = (y, dk, incr + contact[i]);
                Ok(())
            })?;
        for (i, (&p, &(y, dk, incr))) in act.iter().zip(&updates).enumerate() {
            raw.y[k * np + p] = y;
            raw.dk[k * np + p] = dk;
            raw.z[(k * np + p) * d..(k * np + p + 1) * d].copy_from_slice(&zbuf[i * d..(i + 1) * d]);
            raw.increments[p] += incr + dk;
        }
    }
    Ok(raw)
}

fn conditional_expectation(
    carrier: &Carrier<'_>,
    k: usize,
    act: &[usize],
    targets: &[Vec<f64>],
    out: &mut [Vec<f64>],
    cfg: &RegressionConfig,
) -> Result<()> {
    match carrier {
        Carrier::Paths(_) => {
            let d = carrier.dim();
            let mut states = Vec::with_capacity(act.len() * d);
            for &p in act {
                states.extend_from_slice(carrier.state(p, k));
            }
            let weights: Vec<f64> = act.iter().map(|&p| carrier.weight(p)).collect();
            let design = Design {
                states: &states,
                dim: d,
                weights: &weights,
            };
            let refs: Vec<&[f64]> = targets.iter().map(|t| t.as_slice()).collect();
            regression::fit(k, &design, &refs, out, cfg)
        }
        Carrier::Tree(tc) => {
            let mut cells: std::collections::BTreeMap<usize, (f64, Vec<f64>)> = Default::default();
            for (i, &p) in act.iter().enumerate() {
                let w = carrier.weight(p);
                let e = cells
                    .entry(tc.node(p, k))
                    .or_insert_with(|| (0.0, vec![0.0; targets.len()]));
                e.0 += w;
                for (acc, t) in e.1.iter_mut().zip(targets) {
                    *acc += w * t[i];
                }
            }
            for o in out.iter_mut() {
                o.resize(act.len(), 0.0);
            }
            for (i, &p) in act.iter().enumerate() {
                let (w, sums) = &cells[&tc.node(p, k)];
                for (o, s) in out.iter_mut().zip(sums) {
                    o[i] = s / w;
                }
            }
            Ok(())
        }
    }
}

fn assemble(
    carrier: &Carrier<'_>,
    n: usize,
    raw: Raw,
    end: Vec<usize>,
    terminal: &[f64],
) -> SolutionBundle {
    let np = carrier.n_paths();
    let stride = n + 1;
    let mut k = vec![0.0; np * stride];
    for p in 0..np {
        for j in 0..n {
            k[(j + 1) * np + p] = k[j * np + p] + raw.dk[j * np + p];
        }
    }
    let weights: Vec<f64> = (0..np).map(|p| carrier.weight(p)).collect();
    let pathwise: Vec<f64> = (0..np).map(|p| raw.increments[p] + terminal[p]).collect();
    let axis = match carrier.axis() {
        TimeAxis::PerPath(t) if n < carrier.n_steps() => {
            let full = carrier.n_steps() + 1;
            TimeAxis::PerPath((0..np).flat_map(|p| t[p * full..p * full + stride].to_vec()).collect())
        }
        a => a,
    };
    let mut sol = SolutionBundle {
        n_paths: np,
        n_steps: n,
        dim: carrier.dim(),
        weights,
        axis,
        y: raw.y,
        z: raw.z,
        k,
        h: raw.h,
        stop: end,
        pathwise,
        diagnostics: Diagnostics::default(),
    };
    finish_diagnostics(&mut sol, carrier.is_exact());
    sol
}

fn finish_diagnostics(sol: &mut SolutionBundle, exact: bool) {
    let base = sol.y(0, 0);
    let wsum: f64 = sol.weights.iter().sum();
    let y0 = base + (0..sol.n_paths).map(|p| sol.weights[p] * (sol.y(p, 0) - base)).sum::<f64>() / wsum;
    let stderr = if exact || sol.n_paths < 2 {
        0.0
    } else {
        let m: f64 = sol.pathwise.iter().sum::<f64>() / sol.n_paths as f64;
        let var = sol.pathwise.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (sol.n_paths - 1) as f64;
        (var / sol.n_paths as f64).sqrt()
    };
    let mut gap = f64::INFINITY;
    for p in 0..sol.n_paths {
        for k in 0..sol.stop[p].min(sol.n_steps) {
            gap = gap.min(sol.y(p, k) - sol.h(p, k));
        }
    }
    sol.diagnostics.y0 = y0;
    sol.diagnostics.y0_stderr = stderr;
    sol.diagnostics.min_dominance_gap = gap;
    sol.diagnostics.skorokhod_residual = skorokhod_residual(sol);
}

/// `E[sum_k (Y_k - h(X_k)) dK_k]`.
pub fn skorokhod_residual(sol: &SolutionBundle) -> f64 {
    (0..sol.n_paths)
        .map(|p| {
            sol.weights[p]
                * (0..sol.n_steps)
                    .map(|k| (sol.y(p, k) - sol.h(p, k)) * sol.delta_k(p, k))
                    .sum::<f64>()
        })
        .sum()
}

/// Solves on `carrier` up to step `n` with per-path stop indices (`None`: no stopping).
pub fn solve_on_carrier(
    carrier: &Carrier<'_>,
    driver: &DriverSpec,
    obstacle: &ObstacleSpec,
    n: usize,
    stop: Option<&[usize]>,
    cfg: &SolverConfig,
) -> Result<SolutionBundle> {
    cfg.validate()?;
    if n == 0 || n > carrier.n_steps() {
        return Err(Error::Precondition(format!(
            "horizon index {n} outside 1..={}",
            carrier.n_steps()
        )));
    }
    check_step_size(carrier, driver, cfg, n)?;
    let np = carrier.n_paths();
    let end: Vec<usize> = match stop {
        Some(s) => {
            if s.len() != np {
                return Err(Error::Dimension {
                    expected: np,
                    got: s.len(),
                });
            }
            s.iter().map(|&k| k.min(n)).collect()
        }
        None => vec![n; np],
    };
    let terminal: Vec<f64> = (0..np).map(|p| obstacle.xi(carrier.state(p, end[p]))).collect();
    let raw = backward(carrier, n, 0, &end, &terminal, DriverEval::Full(driver), obstacle, cfg)?;
    Ok(assemble(carrier, n, raw, end, &terminal))
}

/// Deterministic horizon `T` on the grid of `bundle`; terminal value `xi(X_T)`.
pub fn solve_finite_horizon(
    bundle: &PathBundle,
    driver: &DriverSpec,
    obstacle: &ObstacleSpec,
    t: f64,
    cfg: &SolverConfig,
) -> Result<SolutionBundle> {
    let n = bundle
        .grid
        .index_of(t)
        .ok_or_else(|| Error::Precondition(format!("T = {t} is not on the grid")))?;
    solve_on_carrier(&Carrier::Paths(bundle), driver, obstacle, n, None, cfg)
}

/// Tree-exact solve over all levels of the lattice.
pub fn solve_tree(
    tree: &TreeCarrier,
    driver: &DriverSpec,
    obstacle: &ObstacleSpec,
    cfg: &SolverConfig,
) -> Result<SolutionBundle> {
    let carrier = Carrier::Tree(tree);
    solve_on_carrier(&carrier, driver, obstacle, carrier.n_steps(), None, cfg)
}

/// Stop indices `hitting_index ^ n_horizon` and the number of paths on which
/// the rule never fired before `n_horizon`.
pub fn stop_indices(carrier: &Carrier<'_>, rule: &HittingRule, n_horizon: usize) -> (Vec<usize>, usize) {
    let hits: Vec<Option<usize>> = match carrier {
        Carrier::Paths(b) => hitting_index(b, |x| (rule.predicate)(x)),
        Carrier::Tree(_) => (0..carrier.n_paths())
            .map(|p| (0..=carrier.n_steps()).find(|&k| (rule.predicate)(carrier.state(p, k))))
            .collect(),
    };
    let mut never = 0;
    let stops = hits
        .into_iter()
        .map(|h| match h {
            Some(k) if k <= n_horizon => k,
            _ => {
                never += 1;
                n_horizon
            }
        })
        .collect();
    (stops, never)
}

/// Random horizon `tau = first hit of the rule`, truncated at `n_horizon`.
/// Drivers act only before the stop index; afterwards `Y` is frozen at `xi(X_tau)`.
pub fn solve_random_horizon(
    carrier: &Carrier<'_>,
    driver: &DriverSpec,
    obstacle: &ObstacleSpec,
    rule: &HittingRule,
    n_horizon: usize,
    cfg: &SolverConfig,
) -> Result<SolutionBundle> {
    let n_grid = carrier.n_steps();
    let mut warnings = Vec::new();
    let n = if n_horizon > n_grid {
        warnings.push(format!("n_horizon {n_horizon} exceeds the grid; truncated to {n_grid}"));
        n_grid
    } else {
        n_horizon
    };
    let (stops, never) = stop_indices(carrier, rule, n);
    if never > 0 {
        warnings.push(format!(
            "rule '{}' did not fire before step {n} on {never} of {} paths",
            rule.name,
            carrier.n_paths()
        ));
    }
    let mut sol = solve_on_carrier(carrier, driver, obstacle, n_grid, Some(&stops), cfg)?;
    sol.diagnostics.warnings.extend(warnings);
    Ok(sol)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonPoint {
    pub n_horizon: usize,
    pub y0: f64,
    pub stderr: f64,
}

/// `Y_0` for increasing truncations `n` of the random horizon.
pub fn random_horizon_sequence(
    carrier: &Carrier<'_>,
    driver: &DriverSpec,
    obstacle: &ObstacleSpec,
    rule: &HittingRule,
    horizons: &[usize],
    cfg: &SolverConfig,
) -> Result<Vec<HorizonPoint>> {
    horizons
        .iter()
        .map(|&n| {
            let s = solve_random_horizon(carrier, driver, obstacle, rule, n, cfg)?;
            Ok(HorizonPoint {
                n_horizon: n,
                y0: s.y0(),
                stderr: s.y0_stderr(),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// `T0` is the first grid time with contraction constant below this.
    pub threshold: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            tol: 1e-8,
            max_iter: 50,
            threshold: 0.9,
        }
    }
}

/// Infinite-horizon problem data for [`solve_infinite_horizon`].
#[derive(Clone, Debug)]
pub struct InfiniteProblem<'a> {
    pub domain: &'a Domain,
    pub coeffs: &'a CoefficientSet,
    pub x0: &'a [f64],
    pub dt: f64,
    pub t_max: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// Simulates paths on `[0, T_max]` and runs [`solve_infinite_on`].
pub fn solve_infinite_horizon(
    problem: &InfiniteProblem<'_>,
    driver: &DriverSpec,
    weights: &WeightSet,
    obstacle: &ObstacleSpec,
    cfg: &SolverConfig,
    picard: &PicardConfig,
) -> Result<SolutionBundle> {
    let grid = TimeGrid::with_horizon(problem.dt, problem.t_max)?;
    let bundle = simulate_paths(
        problem.domain,
        problem.coeffs,
        problem.x0,
        grid,
        problem.n_paths,
        problem.seed,
    )?;
    solve_infinite_on(&Carrier::Paths(&bundle), driver, weights, obstacle, cfg, picard)
}

/// Contraction split: Picard iteration of the driver-frozen problem on
/// `[T0, T_max]`, then the full problem on `[0, T0]` with terminal `Y_{T0}`,
/// stitched with `K = K_head(T0) + K_tail - K_tail(T0)` on the tail.
pub fn solve_infinite_on(
    carrier: &Carrier<'_>,
    driver: &DriverSpec,
    weights: &WeightSet,
    obstacle: &ObstacleSpec,
    cfg: &SolverConfig,
    picard: &PicardConfig,
) -> Result<SolutionBundle> {
    cfg.validate()?;
    let n = carrier.n_steps();
    let np = carrier.n_paths();
    let d = carrier.dim();
    let t_max = carrier.level_time(n)?;
    let mut k0 = None;
    let mut best = f64::INFINITY;
    for k in 0..n {
        let c = contraction_constant(weights, carrier.level_time(k)?)?;
        best = best.min(c);
        if c < picard.threshold {
            k0 = Some((k, c));
            break;
        }
    }
    let (k0, c0) = k0.ok_or(Error::ContractionInfeasible {
        best,
        threshold: picard.threshold,
        t_max,
    })?;
    let t0 = carrier.level_time(k0)?;
    check_step_size(carrier, driver, cfg, n)?;

    let stride = n + 1;
    let end = vec![n; np];
    let terminal: Vec<f64> = (0..np).map(|p| obstacle.xi(carrier.state(p, n))).collect();
    let mut u = vec![0.0; np * stride];
    let mut v = vec![0.0; np * n * d];
    let mut f_frozen = vec![0.0; np * n];
    let mut g_frozen = vec![0.0; np * n];
    let mut trace = Vec::new();
    let mut ratios = Vec::new();
    let mut converged = false;
    let mut tail: Option<Raw> = None;
    for _ in 0..picard.max_iter {
        for p in 0..np {
            for k in k0..n {
                let (t, dt) = (carrier.time(p, k), carrier.dt(p, k));
                let x = carrier.state(p, k);
                let vz = &v[(k * np + p) * d..(k * np + p + 1) * d];
                f_frozen[k * np + p] = effective_f(driver, cfg.time_rule, t, dt, x, u[k * np + p], vz);
                g_frozen[k * np + p] = match cfg.boundary {
                    BoundaryRule::Implicit => driver.g(t, x, u[k * np + p]),
                    BoundaryRule::Contact => driver.g(
                        carrier.time(p, k + 1),
                        &carrier.contact_point(p, k + 1),
                        u[(k + 1) * np + p],
                    ),
                };
            }
        }
        let frozen = DriverEval::Frozen {
            f: &f_frozen,
            g: &g_frozen,
        };
        let raw = backward(carrier, n, k0, &end, &terminal, frozen, obstacle, cfg)?;
        let (dist, norm) = picard_distance(carrier, &raw, &u, &v, k0, n);
        if let Some(&prev) = trace.last() {
            if prev > 0.0 {
                ratios.push(dist / prev);
            }
        }
        trace.push(dist);
        u.copy_from_slice(&raw.y);
        v.copy_from_slice(&raw.z);
        tail = Some(raw);
        if !dist.is_finite() {
            break;
        }
        if dist == 0.0 || dist <= picard.tol * norm {
            converged = true;
            break;
        }
    }
    let tail = tail.expect("at least one Picard iteration");

    // Head on [0, T0] with the tail value at T0 as terminal condition.
    let (y, z, k_cum, h, pathwise) = if k0 == 0 {
        let mut k_cum = vec![0.0; np * stride];
        for p in 0..np {
            for j in 0..n {
                k_cum[(j + 1) * np + p] = k_cum[j * np + p] + tail.dk[j * np + p];
            }
        }
        let pathwise = (0..np).map(|p| tail.increments[p] + terminal[p]).collect();
        (tail.y, tail.z, k_cum, tail.h, pathwise)
    } else {
        let head_end = vec![k0; np];
        let head_terminal: Vec<f64> = (0..np).map(|p| tail.y[k0 * np + p]).collect();
        let head = backward(
            carrier,
            k0,
            0,
            &head_end,
            &head_terminal,
            DriverEval::Full(driver),
            obstacle,
            cfg,
        )?;
        let mut y = vec![0.0; np * stride];
        let mut z = vec![0.0; np * n * d];
        let mut k_cum = vec![0.0; np * stride];
        let mut h = vec![0.0; np * stride];
        for p in 0..np {
            for k in 0..=n {
                let (yy, hh) = if k <= k0 {
                    (head.y[k * np + p], head.h[k * np + p])
                } else {
                    (tail.y[k * np + p], tail.h[k * np + p])
                };
                y[k * np + p] = yy;
                h[k * np + p] = hh;
            }
            for k in 0..n {
                let src = if k < k0 {
                    &head.z[(k * np + p) * d..(k * np + p + 1) * d]
                } else {
                    &tail.z[(k * np + p) * d..(k * np + p + 1) * d]
                };
                z[(k * np + p) * d..(k * np + p + 1) * d].copy_from_slice(src);
            }
            for j in 0..n {
                let dk = if j < k0 {
                    head.dk[j * np + p]
                } else {
                    tail.dk[j * np + p]
                };
                k_cum[(j + 1) * np + p] = k_cum[j * np + p] + dk;
            }
        }
        let pathwise = (0..np)
            .map(|p| head.increments[p] + tail.increments[p] + terminal[p])
            .collect();
        (y, z, k_cum, h, pathwise)
    };
    let mut sol = SolutionBundle {
        n_paths: np,
        n_steps: n,
        dim: d,
        weights: (0..np).map(|p| carrier.weight(p)).collect(),
        axis: carrier.axis(),
        y,
        z,
        k: k_cum,
        h,
        stop: end,
        pathwise,
        diagnostics: Diagnostics::default(),
    };
    finish_diagnostics(&mut sol, carrier.is_exact());
    sol.diagnostics.picard_trace = trace;
    sol.diagnostics.picard_ratios = ratios;
    sol.diagnostics.picard_converged = Some(converged);
    sol.diagnostics.t0 = Some(t0);
    sol.diagnostics.contraction_constant = Some(c0);
    if !converged {
        sol.diagnostics
            .warnings
            .push(format!("Picard iteration did not converge in {} iterations", picard.max_iter));
    }
    Ok(sol)
}

/// `(E sup_k |dY|^2 + E sum_k |dZ|^2 dt)^{1/2}` on the tail, and the same norm of the new iterate.
fn picard_distance(carrier: &Carrier<'_>, raw: &Raw, u: &[f64], v: &[f64], k0: usize, n: usize) -> (f64, f64) {
    let d = carrier.dim();
    let np = carrier.n_paths();
    let mut dist = 0.0;
    let mut norm = 0.0;
    for p in 0..carrier.n_paths() {
        let w = carrier.weight(p);
        let mut sup_d: f64 = 0.0;
        let mut sup_n: f64 = 0.0;
        let mut int_d = 0.0;
        let mut int_n = 0.0;
        for k in k0..=n {
            let y = raw.y[k * np + p];
            sup_d = sup_d.max((y - u[k * np + p]).powi(2));
            sup_n = sup_n.max(y * y);
            if k < n {
                let dt = carrier.dt(p, k);
                for j in 0..d {
                    let i = (k * np + p) * d + j;
                    int_d += (raw.z[i] - v[i]).powi(2) * dt;
                    int_n += raw.z[i].powi(2) * dt;
                }
            }
        }
        dist += w * (sup_d + int_d);
        norm += w * (sup_n + int_n);
    }
    (dist.sqrt(), norm.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// Monte Carlo estimate of both sides of the weighted a-priori bound
///
/// `E[sup e^{lt+mG}|Y|^2 + int e^{ls+mG}(|Y|^2+|Z|^2) ds + int e^{ls+mG}|Y|^2 dG + K_tau^2]`
/// against `E[e^{l tau + m G_tau}|xi|^2 + int e^{ls+mG}(phi^2 ds + psi^2 dG) + sup e^{lt+mG}(S^+)^2]`
/// with `l = lambda`, `m = mu` of the driver.
pub fn apriori_estimate_check(
    sol: &SolutionBundle,
    carrier: &Carrier<'_>,
    driver: &DriverSpec,
) -> Result<EstimateReport> {
    if carrier.n_paths() != sol.n_paths || carrier.n_steps() < sol.n_steps {
        return Err(Error::Structure("solution and carrier do not match".into()));
    }
    let (lam, mu) = (driver.lambda, driver.mu);
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for p in 0..sol.n_paths {
        let end = sol.stop_index(p).min(sol.n_steps);
        let mut g = 0.0;
        let mut sup_y: f64 = 0.0;
        let mut sup_s: f64 = 0.0;
        let mut int_l = 0.0;
        let mut int_r = 0.0;
        for k in 0..=end {
            let t = sol.time(p, k);
            let expo = lam * t + mu * g;
            if expo > 700.0 {
                return Err(Error::Overflow { exponent: expo });
            }
            let e = expo.exp();
            let y = sol.y(p, k);
            sup_y = sup_y.max(e * y * y);
            sup_s = sup_s.max(e * sol.h(p, k).max(0.0).powi(2));
            if k < end {
                let dt = carrier.dt(p, k);
                let dg = carrier.dg(p, k);
                let z2: f64 = sol.z(p, k).iter().map(|v| v * v).sum();
                int_l += e * ((y * y + z2) * dt + y * y * dg);
                int_r += e * ((driver.growth_phi)(t).powi(2) * dt + (driver.growth_psi)(t).powi(2) * dg);
                g += dg;
            } else {
                rhs += sol.weights[p] * e * y * y;
            }
        }
        let k_tau = sol.k(p, end);
        lhs += sol.weights[p] * (sup_y + int_l + k_tau * k_tau);
        rhs += sol.weights[p] * (int_r + sup_s);
    }
    let ratio = if lhs == 0.0 {
        0.0
    } else if rhs == 0.0 {
        f64::INFINITY
    } else {
        lhs / rhs
    };
    Ok(EstimateReport { lhs, rhs, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{ExpSum, TerminalRule};
    use crate::sde::CoefficientSet;
    use crate::snell::{random_tree, reflected_from_snell, RandomTreeSpec, TreeDrivers};
    use std::sync::Arc;

    fn bm_bundle(n_paths: usize, seed: u64) -> PathBundle {
        let dom = Domain::interval(0.0, 1.0).unwrap();
        let coeffs = CoefficientSet::constant(vec![0.0], 0.5);
        simulate_paths(&dom, &coeffs, &[0.5], TimeGrid::new(0.02, 50).unwrap(), n_paths, seed).unwrap()
    }

    fn const_f(c: f64) -> DriverSpec {
        DriverSpec::new("c", Arc::new(move |_, _, _, _| c), Arc::new(|_, _, _| 0.0)).independent_of_solution()
    }

    #[test]
    fn constant_terminal_is_reproduced() {
        let b = bm_bundle(500, 1);
        let cfg = SolverConfig::default().with_regression(RegressionConfig::piecewise_constant(8));
        let s = solve_finite_horizon(&b, &DriverSpec::zero(), &ObstacleSpec::sentinel(2.5), 1.0, &cfg).unwrap();
        for p in 0..b.n_paths {
            for k in 0..=50 {
                assert_eq!(s.y(p, k), 2.5);
                assert_eq!(s.k(p, k), 0.0);
            }
        }
    }

    #[test]
    fn unit_driver_integrates_time() {
        let b = bm_bundle(2000, 2);
        let s = solve_finite_horizon(&b, &const_f(1.0), &ObstacleSpec::sentinel(0.0), 1.0, &SolverConfig::default())
            .unwrap();
        assert!((s.y0() - 1.0).abs() <= 3.0 * s.y0_stderr() + 1e-12);
    }

    #[test]
    fn horizon_must_lie_on_grid() {
        let b = bm_bundle(10, 2);
        let e = solve_finite_horizon(&b, &const_f(1.0), &ObstacleSpec::sentinel(0.0), 0.011, &SolverConfig::default());
        assert!(matches!(e, Err(Error::Precondition(_))));
    }

    #[test]
    fn active_obstacle_and_residual() {
        let b = bm_bundle(500, 3);
        let o = ObstacleSpec::constant(5.0, TerminalRule::Explicit(Arc::new(|_| 0.0)));
        let s = solve_finite_horizon(&b, &DriverSpec::zero(), &o, 1.0, &SolverConfig::default()).unwrap();
        assert_eq!(s.y0(), 5.0);
        for p in 0..b.n_paths {
            assert_eq!(s.k(p, 49), 0.0);
            assert_eq!(s.k(p, 50), 5.0);
        }
        assert_eq!(s.diagnostics.skorokhod_residual, 0.0);
    }

    #[test]
    fn tree_solver_matches_envelope_construction() {
        for seed in 0..5 {
            let l = random_tree(&RandomTreeSpec::new(4, 3), seed).unwrap();
            let f = DriverSpec::new(
                "tf",
                Arc::new(|t, x, _, _| (x[0] * 3.0).sin() + t),
                Arc::new(|_, x, _| x[0].cos()),
            )
            .independent_of_solution();
            let o = ObstacleSpec::new("h", Arc::new(|x: &[f64]| x[0] - 0.4), TerminalRule::Explicit(Arc::new(|x: &[f64]| x[0] * x[0])));
            let data = TreeDrivers::evaluate(&l, &f, &o).unwrap();
            let oracle = reflected_from_snell(&l, &data).unwrap();
            let tree = TreeCarrier::new(l).unwrap();
            let s = solve_tree(&tree, &f, &o, &SolverConfig::default()).unwrap();
            for p in 0..s.n_paths {
                for k in 0..=s.n_steps {
                    let node = tree.node(p, k);
                    assert!((s.y(p, k) - oracle.y[node]).abs() < 1e-10);
                    assert!((s.k(p, k) - oracle.k[node]).abs() < 1e-10);
                }
            }
            assert_eq!(s.diagnostics.skorokhod_residual, 0.0);
            assert!(s.diagnostics.min_dominance_gap >= 0.0);
        }
    }

    #[test]
    fn random_horizon_reductions() {
        let b = bm_bundle(300, 4);
        let c = Carrier::Paths(&b);
        let cfg = SolverConfig::default();
        let drv = const_f(1.0);
        let o = ObstacleSpec::sentinel(0.0);
        let full = solve_finite_horizon(&b, &drv, &o, 1.0, &cfg).unwrap();
        let never = solve_random_horizon(&c, &drv, &o, &HittingRule::never(), 50, &cfg).unwrap();
        assert_eq!(full.y, never.y);
        let now = solve_random_horizon(&c, &drv, &o, &HittingRule::immediately(), 50, &cfg).unwrap();
        assert!(now.y.iter().all(|&y| y == 0.0));
        assert!(now.k.iter().all(|&k| k == 0.0));
    }

    #[test]
    fn zero_infinite_problem_needs_one_iteration() {
        let b = bm_bundle(100, 5);
        let w = WeightSet {
            u: ExpSum::zero(),
            v: ExpSum::exp(1.0, 1.0),
            v_prime: ExpSum::exp(1.0, 1.0),
            local_time_rate: 1.0,
        };
        // T_max = 1 is too short for the threshold.
        let e = solve_infinite_on(&Carrier::Paths(&b), &DriverSpec::zero(), &w, &ObstacleSpec::sentinel(0.0), &SolverConfig::default(), &PicardConfig::default());
        assert!(matches!(e, Err(Error::ContractionInfeasible { .. })));
        let s = solve_infinite_on(&Carrier::Paths(&b), &DriverSpec::zero(), &WeightSet::zero(), &ObstacleSpec::sentinel(0.0), &SolverConfig::default(), &PicardConfig::default()).unwrap();
        assert_eq!(s.diagnostics.picard_trace, vec![0.0]);
        assert!(s.y.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn estimate_check_zero_problem() {
        let b = bm_bundle(100, 6);
        let s = solve_finite_horizon(&b, &DriverSpec::zero(), &ObstacleSpec::sentinel(0.0), 1.0, &SolverConfig::default()).unwrap();
        let r = apriori_estimate_check(&s, &Carrier::Paths(&b), &DriverSpec::zero()).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert_eq!(r.ratio, 0.0);
    }

    #[test]
    fn stiff_fixed_point_is_reported() {
        let b = bm_bundle(50, 7);
        let d = DriverSpec::new("stiff", Arc::new(|_, _, y, _| -40.0 * y), Arc::new(|_, _, y| -y))
            .with_constants(-40.0, -1.0, 1.0);
        let mut cfg = SolverConfig::default();
        cfg.local_time_rate = 0.0;
        let o = ObstacleSpec::sentinel(1.0);
        let e1 = solve_finite_horizon(&b, &d, &o, 1.0, &cfg);
        assert!(matches!(e1, Err(Error::DriverStiffness { .. })));
    }

    #[test]
    fn gauss_legendre_weights_sum_to_one() {
        for n in 1..=4 {
            let s: f64 = gauss_legendre(n).iter().map(|(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-15);
            // Exact for polynomials of degree 2n - 1.
            let m: f64 = gauss_legendre(n).iter().map(|(c, w)| w * c.powi(2 * n as i32 - 1)).sum();
            assert!((m - 1.0 / (2 * n) as f64).abs() < 1e-15);
        }
    }
}
