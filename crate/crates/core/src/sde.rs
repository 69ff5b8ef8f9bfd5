//! Reflected diffusions `(X, G)` by the projection Euler scheme.
//!
//! Each step takes an Euler predictor and, if it leaves the closure, projects
//! it back. The projection distance is the local-time increment `dG`; with the
//! normalized distance function this equals the length of the push along
//! `grad phi` at the projected point.
//!
//! Randomness is keyed by `(seed, path index)`: every path owns a ChaCha
//! stream, so results do not depend on how paths are scheduled.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Domain;

/// `x -> out`, where `out` has length `d` (drift) or `d * d` row-major (diffusion).
pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub struct CoefficientSet {
    dim: usize,
    drift: VectorField,
    diffusion: VectorField,
    /// Declared `K` with `|b(x)-b(y)| + |s(x)-s(y)| <= K |x-y|`.
    pub lipschitz_bound: f64,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("dim", &self.dim)
            .field("lipschitz_bound", &self.lipschitz_bound)
            .finish_non_exhaustive()
    }
}

impl CoefficientSet {
    pub fn new(dim: usize, drift: VectorField, diffusion: VectorField, lipschitz_bound: f64) -> Self {
        CoefficientSet {
            dim,
            drift,
            diffusion,
            lipschitz_bound,
        }
    }

    /// Constant drift vector and isotropic diffusion `sigma * I`.
    pub fn constant(drift: Vec<f64>, sigma: f64) -> Self {
        let dim = drift.len();
        let b = drift.clone();
        CoefficientSet {
            dim,
            drift: Arc::new(move |_x, out| out.copy_from_slice(&b)),
            diffusion: Arc::new(move |_x, out| {
                out.fill(0.0);
                for i in 0..dim {
                    out[i * dim + i] = sigma;
                }
            }),
            lipschitz_bound: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }

    /// Largest observed `(|b(x)-b(y)| + |s(x)-s(y)|) / |x-y|` minus the declared bound.
    pub fn lipschitz_margin(&self, pairs: &[(Vec<f64>, Vec<f64>)]) -> f64 {
        let d = self.dim;
        let (mut bx, mut by) = (vec![0.0; d], vec![0.0; d]);
        let (mut sx, mut sy) = (vec![0.0; d * d], vec![0.0; d * d]);
        let mut worst = f64::NEG_INFINITY;
        for (x, y) in pairs {
            let dx = norm_diff(x, y);
            if dx == 0.0 {
                continue;
            }
            self.drift(x, &mut bx);
            self.drift(y, &mut by);
            self.diffusion(x, &mut sx);
            self.diffusion(y, &mut sy);
            let lhs = norm_diff(&bx, &by) + norm_diff(&sx, &sy);
            worst = worst.max(lhs / dx - self.lipschitz_bound);
        }
        worst
    }
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Uniform grid `t_k = k dt`, `k = 0..=n_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: usize,
    /// Projection Euler sub-steps per grid step. One reproduces the plain scheme.
    #[serde(default = "one")]
    pub substeps: usize,
}

fn one() -> usize {
    1
}

impl TimeGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Argument(format!("time step must be positive, got {dt}")));
        }
        if n_steps == 0 {
            return Err(Error::Argument("grid needs at least one step".into()));
        }
        Ok(TimeGrid {
            dt,
            n_steps,
            substeps: 1,
        })
    }

    /// Grid with `round(horizon / dt)` steps.
    pub fn with_horizon(dt: f64, horizon: f64) -> Result<Self> {
        let n = (horizon / dt).round();
        if !(n >= 1.0) {
            return Err(Error::Argument(format!("horizon {horizon} shorter than step {dt}")));
        }
        TimeGrid::new(dt, n as usize)
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps.max(1);
        self
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.n_steps)
    }

    /// Index of `t` on the grid, if it lies on it (relative tolerance 1e-9).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = (t / self.dt).round();
        if k < 0.0 || k > self.n_steps as f64 {
            return None;
        }
        ((k * self.dt - t).abs() <= 1e-9 * self.dt.max(t.abs())).then_some(k as usize)
    }
}

/// Ensemble of reflected paths. Storage is step-major, as the backward solver reads it.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBundle {
    pub domain: Domain,
    pub grid: TimeGrid,
    pub dim: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Stream index of the first stored path.
    pub first_path: usize,
    x: Vec<f64>,
    dg: Vec<f64>,
    dw: Vec<f64>,
    on_boundary: Vec<bool>,
}

impl PathBundle {
    pub fn n_steps(&self) -> usize {
        self.grid.n_steps
    }

    pub fn state(&self, path: usize, k: usize) -> &[f64] {
        let d = self.dim;
        let base = (k * self.n_paths + path) * d;
        &self.x[base..base + d]
    }

    /// Local-time increment over `[t_k, t_{k+1}]`.
    pub fn dg(&self, path: usize, k: usize) -> f64 {
        self.dg[k * self.n_paths + path]
    }

    pub fn dw(&self, path: usize, k: usize) -> &[f64] {
        let d = self.dim;
        let base = (k * self.n_paths + path) * d;
        &self.dw[base..base + d]
    }

    pub fn on_boundary(&self, path: usize, k: usize) -> bool {
        self.on_boundary[k * self.n_paths + path]
    }

    /// `G_0 = 0, G_{k+1} = G_k + dG_k` along one path.
    pub fn cumulative_g(&self, path: usize) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.grid.n_steps + 1);
        let mut acc = 0.0;
        g.push(acc);
        for k in 0..self.grid.n_steps {
            acc += self.dg(path, k);
            g.push(acc);
        }
        g
    }

    /// Writes the CSV dump `path,k,t,x_1..x_d,dG,dW_1..dW_d,on_boundary`.
    /// The last grid index has no increment; its `dG` and `dW` are written as 0.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.dim;
        let mut header = String::from("path,k,t");
        for i in 1..=d {
            header.push_str(&format!(",x_{i}"));
        }
        header.push_str(",dG");
        for i in 1..=d {
            header.push_str(&format!(",dW_{i}"));
        }
        header.push_str(",on_boundary");
        writeln!(w, "{header}")?;
        let n = self.grid.n_steps;
        for p in 0..self.n_paths {
            for k in 0..=n {
                let mut line = format!("{p},{k},{}", self.grid.time(k));
                for v in self.state(p, k) {
                    line.push_str(&format!(",{v}"));
                }
                if k < n {
                    line.push_str(&format!(",{}", self.dg(p, k)));
                    for v in self.dw(p, k) {
                        line.push_str(&format!(",{v}"));
                    }
                    line.push_str(if self.on_boundary(p, k) { ",1" } else { ",0" });
                } else {
                    line.push_str(",0");
                    for _ in 0..d {
                        line.push_str(",0");
                    }
                    line.push_str(",0");
                }
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }
}

pub(crate) fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Per-step output of [`walk_path`].
pub(crate) struct StepRecord<'a> {
    pub k: usize,
    pub x_next: &'a [f64],
    pub dg: f64,
    pub dw: &'a [f64],
    pub projected: bool,
}

/// Simulates one path, reporting every step to `visit`. Shared by the stored
/// and the streaming simulators so both see identical numbers.
pub(crate) fn walk_path<F>(
    domain: &Domain,
    coeffs: &CoefficientSet,
    x0: &[f64],
    grid: &TimeGrid,
    seed: u64,
    path: usize,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(StepRecord<'_>),
{
    let d = coeffs.dim();
    let mut rng = path_rng(seed, path);
    let mut x = x0.to_vec();
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * d];
    let mut xi = vec![0.0; d];
    let mut dw_step = vec![0.0; d];
    let mut dw_sub = vec![0.0; d];
    let m = grid.substeps.max(1);
    let h = grid.dt / m as f64;
    let sqrt_h = h.sqrt();
    for k in 0..grid.n_steps {
        dw_step.fill(0.0);
        let mut dg = 0.0;
        let mut projected = false;
        for _ in 0..m {
            for w in dw_sub.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = sqrt_h * z;
            }
            coeffs.drift(&x, &mut b);
            coeffs.diffusion(&x, &mut s);
            for i in 0..d {
                let mut v = x[i] + b[i] * h;
                for j in 0..d {
                    v += s[i * d + j] * dw_sub[j];
                }
                xi[i] = v;
            }
            if xi.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("Euler predictor on path {path}"),
                    step: k,
                });
            }
            if domain.phi_unchecked(&xi) < 0.0 {
                dg += domain.project_in_place(&mut xi);
                projected = true;
            }
            x.copy_from_slice(&xi);
            for (acc, w) in dw_step.iter_mut().zip(&dw_sub) {
                *acc += w;
            }
        }
        visit(StepRecord {
            k,
            x_next: &x,
            dg,
            dw: &dw_step,
            projected,
        });
    }
    Ok(())
}

fn check_start(domain: &Domain, coeffs: &CoefficientSet, x0: &[f64]) -> Result<()> {
    if coeffs.dim() != domain.dim() {
        return Err(Error::Dimension {
            expected: domain.dim(),
            got: coeffs.dim(),
        });
    }
    let phi = domain.phi(x0)?;
    if !(phi >= 0.0) {
        return Err(Error::Precondition(format!(
            "start {x0:?} lies outside the closure (phi = {phi})"
        )));
    }
    Ok(())
}

/// Simulates `n_paths` reflected paths from `x0` on `grid`.
pub fn simulate_paths(
    domain: &Domain,
    coeffs: &CoefficientSet,
    x0: &[f64],
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    simulate_path_batch(domain, coeffs, x0, grid, 0, n_paths, seed)
}

/// Simulates the paths with stream indices `first_path..first_path + n_paths`.
/// Concatenating batches reproduces one large run path for path.
pub fn simulate_path_batch(
    domain: &Domain,
    coeffs: &CoefficientSet,
    x0: &[f64],
    grid: TimeGrid,
    first_path: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    check_start(domain, coeffs, x0)?;
    if n_paths == 0 {
        return Err(Error::Argument("need at least one path".into()));
    }
    let d = domain.dim();
    let n = grid.n_steps;
    let mut x = vec![0.0; n_paths * (n + 1) * d];
    let mut dg = vec![0.0; n_paths * n];
    let mut dw = vec![0.0; n_paths * n * d];
    let mut flags = vec![false; n_paths * n];

    // Paths are walked in parallel blocks and scattered into the step-major arrays.
    const BLOCK: usize = 256;
    let starts: Vec<usize> = (0..n_paths).step_by(BLOCK).collect();
    let group = 4 * rayon::current_num_threads().max(1);
    for chunk in starts.chunks(group) {
        let locals: Vec<Result<(usize, Vec<f64>, Vec<f64>, Vec<f64>, Vec<bool>)>> = chunk
            .par_iter()
            .map(|&s| {
                let len = BLOCK.min(n_paths - s);
                let mut lx = vec![0.0; len * (n + 1) * d];
                let mut lg = vec![0.0; len * n];
                let mut lw = vec![0.0; len * n * d];
                let mut lf = vec![false; len * n];
                for q in 0..len {
                    let xs = &mut lx[q * (n + 1) * d..(q + 1) * (n + 1) * d];
                    xs[..d].copy_from_slice(x0);
                    walk_path(domain, coeffs, x0, &grid, seed, first_path + s + q, |rec| {
                        let k = rec.k;
                        xs[(k + 1) * d..(k + 2) * d].copy_from_slice(rec.x_next);
                        lg[q * n + k] = rec.dg;
                        lw[(q * n + k) * d..(q * n + k + 1) * d].copy_from_slice(rec.dw);
                        lf[q * n + k] = rec.projected;
                    })?;
                }
                Ok((s, lx, lg, lw, lf))
            })
            .collect();
        for local in locals {
            let (s, lx, lg, lw, lf) = local?;
            let len = lg.len() / n;
            for q in 0..len {
                let p = s + q;
                for k in 0..=n {
                    x[(k * n_paths + p) * d..(k * n_paths + p + 1) * d]
                        .copy_from_slice(&lx[(q * (n + 1) + k) * d..(q * (n + 1) + k + 1) * d]);
                }
                for k in 0..n {
                    dg[k * n_paths + p] = lg[q * n + k];
                    dw[(k * n_paths + p) * d..(k * n_paths + p + 1) * d]
                        .copy_from_slice(&lw[(q * n + k) * d..(q * n + k + 1) * d]);
                    flags[k * n_paths + p] = lf[q * n + k];
                }
            }
        }
    }

    Ok(PathBundle {
        domain: domain.clone(),
        grid,
        dim: d,
        n_paths,
        seed,
        first_path,
        x,
        dg,
        dw,
        on_boundary: flags,
    })
}

/// First grid index at which `predicate(X_k)` holds, per path; `None` if never.
pub fn hitting_index<P>(bundle: &PathBundle, predicate: P) -> Vec<Option<usize>>
where
    P: Fn(&[f64]) -> bool + Sync,
{
    (0..bundle.n_paths)
        .into_par_iter()
        .map(|p| (0..=bundle.n_steps()).find(|&k| predicate(bundle.state(p, k))))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMoments {
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    /// `E[sup_k |X^x_k - X^x'_k|^4] / |x - x'|^4`; 0 for identical starts.
    pub sup_ratio: f64,
    /// `E[G_T^p] / (1 + T^p)` for the start `x`.
    pub g_moment_ratio: f64,
    /// `E[exp(mu G_T)]` for the start `x`.
    pub exp_moment: f64,
    pub exp_moment_stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub horizon: f64,
    pub p: f64,
    pub mu: f64,
    pub pairs: Vec<PairMoments>,
    pub max_ratio: f64,
    pub nonfinite: bool,
}

#[derive(Default, Clone, Copy)]
struct PairAccum {
    sup4: f64,
    gp: f64,
    eg: f64,
    eg2: f64,
}

/// Monte Carlo moments of coupled reflected paths (same noise for `x` and `x'`).
/// Paths are streamed, not stored.
#[allow(clippy::too_many_arguments)]
pub fn moment_report(
    domain: &Domain,
    coeffs: &CoefficientSet,
    pairs: &[(Vec<f64>, Vec<f64>)],
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
    p: f64,
    mu: f64,
) -> Result<MomentReport> {
    if !(mu > 0.0) {
        return Err(Error::Argument(format!("mu must be positive, got {mu}")));
    }
    if n_paths == 0 {
        return Err(Error::Argument("need at least one path".into()));
    }
    let horizon = grid.horizon();
    let mut out = Vec::with_capacity(pairs.len());
    for (x, xp) in pairs {
        check_start(domain, coeffs, x)?;
        check_start(domain, coeffs, xp)?;
        let acc = (0..n_paths)
            .into_par_iter()
            .map(|path| -> Result<PairAccum> {
                let mut traj = Vec::with_capacity(grid.n_steps);
                let mut g = 0.0;
                walk_path(domain, coeffs, x, &grid, seed, path, |rec| {
                    traj.push(rec.x_next.to_vec());
                    g += rec.dg;
                })?;
                let mut sup = norm_diff(x, xp);
                walk_path(domain, coeffs, xp, &grid, seed, path, |rec| {
                    sup = sup.max(norm_diff(&traj[rec.k], rec.x_next));
                })?;
                let e = (mu * g).exp();
                Ok(PairAccum {
                    sup4: sup.powi(4),
                    gp: g.powf(p),
                    eg: e,
                    eg2: e * e,
                })
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(PairAccum::default(), |a, b| PairAccum {
                sup4: a.sup4 + b.sup4,
                gp: a.gp + b.gp,
                eg: a.eg + b.eg,
                eg2: a.eg2 + b.eg2,
            });
        let n = n_paths as f64;
        let d4 = norm_diff(x, xp).powi(4);
        let sup_ratio = if d4 == 0.0 { 0.0 } else { acc.sup4 / n / d4 };
        let mean_e = acc.eg / n;
        let var_e = (acc.eg2 / n - mean_e * mean_e).max(0.0);
        out.push(PairMoments {
            x: x.clone(),
            x_prime: xp.clone(),
            sup_ratio,
            g_moment_ratio: acc.gp / n / (1.0 + horizon.powf(p)),
            exp_moment: mean_e,
            exp_moment_stderr: (var_e / n).sqrt(),
        });
    }
    let max_ratio = out.iter().map(|m| m.sup_ratio).fold(0.0, f64::max);
    let nonfinite = out.iter().any(|m| {
        !(m.sup_ratio.is_finite() && m.g_moment_ratio.is_finite() && m.exp_moment.is_finite())
    });
    Ok(MomentReport {
        horizon,
        p,
        mu,
        pairs: out,
        max_ratio,
        nonfinite,
    })
}
