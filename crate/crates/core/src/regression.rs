//! Least-squares conditional expectations `E[target | X_k]` on a set of paths.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Basis {
    /// Monomials of total degree `<= degree` in the standardized state.
    Polynomial { degree: usize },
    /// Bin averages along the first state coordinate.
    PiecewiseConstant { bins: usize },
    /// Per-bin affine fit in the first state coordinate.
    LocalLinear { bins: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    pub basis: Basis,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_min_per_bin")]
    pub min_paths_per_bin: usize,
}

fn default_ridge() -> f64 {
    1e-10
}

fn default_min_per_bin() -> usize {
    20
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            basis: Basis::Polynomial { degree: 3 },
            ridge: default_ridge(),
            min_paths_per_bin: default_min_per_bin(),
        }
    }
}

impl RegressionConfig {
    pub fn polynomial(degree: usize) -> Self {
        RegressionConfig {
            basis: Basis::Polynomial { degree },
            ..Default::default()
        }
    }

    pub fn piecewise_constant(bins: usize) -> Self {
        RegressionConfig {
            basis: Basis::PiecewiseConstant { bins },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.basis {
            Basis::Polynomial { degree } if degree > 6 => {
                return Err(Error::Argument(format!("polynomial degree {degree} > 6")))
            }
            Basis::PiecewiseConstant { bins } | Basis::LocalLinear { bins } if bins == 0 => {
                return Err(Error::Argument("need at least one bin".into()))
            }
            _ => {}
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::Argument(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        Ok(())
    }
}

/// Regression inputs for one time step: states of the participating paths
/// (row-major, `dim` per path) and their probability weights.
pub(crate) struct Design<'a> {
    pub states: &'a [f64],
    pub dim: usize,
    pub weights: &'a [f64],
}

impl Design<'_> {
    fn len(&self) -> usize {
        self.weights.len()
    }

    fn x(&self, i: usize, j: usize) -> f64 {
        self.states[i * self.dim + j]
    }
}

/// Fits every target against the same design and writes fitted values.
pub(crate) fn fit(
    step: usize,
    design: &Design<'_>,
    targets: &[&[f64]],
    out: &mut [Vec<f64>],
    cfg: &RegressionConfig,
) -> Result<()> {
    let n = design.len();
    for o in out.iter_mut() {
        o.resize(n, 0.0);
    }
    if n == 0 {
        return Ok(());
    }
    let wsum: f64 = design.weights.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::Basis {
            step,
            reason: "design has zero total weight".into(),
        });
    }
    // Standardize each coordinate; constant coordinates drop out of the basis.
    let mut means = vec![0.0; design.dim];
    let mut scales = vec![0.0; design.dim];
    for j in 0..design.dim {
        let m = (0..n).map(|i| design.weights[i] * design.x(i, j)).sum::<f64>() / wsum;
        let v = (0..n)
            .map(|i| design.weights[i] * (design.x(i, j) - m).powi(2))
            .sum::<f64>()
            / wsum;
        means[j] = m;
        scales[j] = v.sqrt();
    }
    let live: Vec<usize> = (0..design.dim)
        .filter(|&j| scales[j] > 1e-12 * (1.0 + means[j].abs()))
        .collect();
    if live.is_empty() {
        for (o, t) in out.iter_mut().zip(targets) {
            let m = weighted_mean(design.weights, t, wsum);
            o.fill(m);
        }
        return Ok(());
    }
    fit_basis(step, design, targets, out, cfg, &live, &means, &scales)?;
    // Every basis contains the constants; return them without rounding.
    for (o, t) in out.iter_mut().zip(targets) {
        if t.iter().all(|&v| v == t[0]) {
            o.fill(t[0]);
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fit_basis(
    step: usize,
    design: &Design<'_>,
    targets: &[&[f64]],
    out: &mut [Vec<f64>],
    cfg: &RegressionConfig,
    live: &[usize],
    means: &[f64],
    scales: &[f64],
) -> Result<()> {
    let n = design.len();
    match cfg.basis {
        Basis::Polynomial { degree } => {
            let exps = monomials(live.len(), degree);
            let z = |i: usize, e: &[usize]| -> f64 {
                e.iter()
                    .zip(live)
                    .map(|(&p, &j)| ((design.x(i, j) - means[j]) / scales[j]).powi(p as i32))
                    .product()
            };
            let m = exps.len();
            let mut phi = vec![0.0; n * m];
            for i in 0..n {
                for (c, e) in exps.iter().enumerate() {
                    phi[i * m + c] = z(i, e);
                }
            }
            least_squares(step, &phi, m, design.weights, targets, out, cfg.ridge)
        }
        Basis::PiecewiseConstant { bins } => {
            let groups = bin_groups(design, bins, cfg.min_paths_per_bin);
            for (o, t) in out.iter_mut().zip(targets) {
                for g in &groups {
                    let w: f64 = g.iter().map(|&i| design.weights[i]).sum();
                    let t0 = t[g[0]];
                    let m = t0 + g.iter().map(|&i| design.weights[i] * (t[i] - t0)).sum::<f64>() / w;
                    for &i in g {
                        o[i] = m;
                    }
                }
            }
            Ok(())
        }
        Basis::LocalLinear { bins } => {
            let groups = bin_groups(design, bins, cfg.min_paths_per_bin);
            for g in &groups {
                let w: Vec<f64> = g.iter().map(|&i| design.weights[i]).collect();
                let ws: f64 = w.iter().sum();
                let mx = g.iter().zip(&w).map(|(&i, wi)| wi * design.x(i, 0)).sum::<f64>() / ws;
                let vx = g
                    .iter()
                    .zip(&w)
                    .map(|(&i, wi)| wi * (design.x(i, 0) - mx).powi(2))
                    .sum::<f64>()
                    / ws;
                let sx = vx.sqrt();
                let sub_targets: Vec<Vec<f64>> =
                    targets.iter().map(|t| g.iter().map(|&i| t[i]).collect()).collect();
                if !(sx > 1e-12 * (1.0 + mx.abs())) || g.len() < 2 {
                    for (o, t) in out.iter_mut().zip(&sub_targets) {
                        let m = weighted_mean(&w, t, ws);
                        for &i in g {
                            o[i] = m;
                        }
                    }
                    continue;
                }
                let phi: Vec<f64> = g
                    .iter()
                    .flat_map(|&i| [1.0, (design.x(i, 0) - mx) / sx])
                    .collect();
                let refs: Vec<&[f64]> = sub_targets.iter().map(|v| v.as_slice()).collect();
                let mut sub_out = vec![Vec::new(); targets.len()];
                least_squares(step, &phi, 2, &w, &refs, &mut sub_out, cfg.ridge)?;
                for (o, s) in out.iter_mut().zip(&sub_out) {
                    for (&i, v) in g.iter().zip(s) {
                        o[i] = *v;
                    }
                }
            }
            Ok(())
        }
    }
}

// Centred on the first value so that constant targets are returned exactly.
fn weighted_mean(w: &[f64], t: &[f64], wsum: f64) -> f64 {
    let t0 = t.first().copied().unwrap_or(0.0);
    t0 + w.iter().zip(t).map(|(w, t)| w * (t - t0)).sum::<f64>() / wsum
}

/// Exponent vectors of total degree `<= degree` in `d` variables, constant first.
fn monomials(d: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; d]];
    for total in 1..=degree {
        let mut cur = vec![0; d];
        push_compositions(total, 0, &mut cur, &mut out);
    }
    out
}

fn push_compositions(rest: usize, j: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if j + 1 == cur.len() {
        cur[j] = rest;
        out.push(cur.clone());
        cur[j] = 0;
        return;
    }
    for p in (0..=rest).rev() {
        cur[j] = p;
        push_compositions(rest - p, j + 1, cur, out);
    }
    cur[j] = 0;
}

/// Weighted normal equations with a ridge on every column but the intercept.
fn least_squares(
    step: usize,
    phi: &[f64],
    m: usize,
    w: &[f64],
    targets: &[&[f64]],
    out: &mut [Vec<f64>],
    ridge: f64,
) -> Result<()> {
    let n = w.len();
    let mut gram = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DMatrix::<f64>::zeros(m, targets.len());
    for i in 0..n {
        let row = &phi[i * m..(i + 1) * m];
        for a in 0..m {
            let wa = w[i] * row[a];
            for b in a..m {
                gram[(a, b)] += wa * row[b];
            }
            for (c, t) in targets.iter().enumerate() {
                rhs[(a, c)] += wa * t[i];
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    let wsum: f64 = w.iter().sum();
    for a in 1..m {
        gram[(a, a)] += ridge * wsum;
    }
    let diag: Vec<f64> = (0..m).map(|a| gram[(a, a)]).collect();
    let chol = gram.cholesky().ok_or_else(|| Error::Basis {
        step,
        reason: "normal equations are not positive definite".into(),
    })?;
    let l = chol.l();
    for a in 0..m {
        if !(l[(a, a)] * l[(a, a)] > 1e-13 * diag[a].max(f64::MIN_POSITIVE)) {
            return Err(Error::Basis {
                step,
                reason: format!("rank-deficient design (column {a})"),
            });
        }
    }
    let coef = chol.solve(&rhs);
    for (c, o) in out.iter_mut().enumerate() {
        let beta = DVector::from_iterator(m, (0..m).map(|a| coef[(a, c)]));
        o.resize(n, 0.0);
        for i in 0..n {
            let row = &phi[i * m..(i + 1) * m];
            o[i] = row.iter().zip(beta.iter()).map(|(p, b)| p * b).sum();
        }
    }
    Ok(())
}

/// Equal-width bins in the first coordinate; bins with fewer than `min_count`
/// paths are merged into their right neighbour (the last into its left).
fn bin_groups(design: &Design<'_>, bins: usize, min_count: usize) -> Vec<Vec<usize>> {
    let n = design.len();
    let (lo, hi) = (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
        let x = design.x(i, 0);
        (lo.min(x), hi.max(x))
    });
    let width = (hi - lo) / bins as f64;
    let mut raw = vec![Vec::new(); bins];
    for i in 0..n {
        let b = if width > 0.0 {
            (((design.x(i, 0) - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        raw[b].push(i);
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut pending = Vec::new();
    for b in raw {
        pending.extend(b);
        if pending.len() >= min_count.max(1) {
            groups.push(std::mem::take(&mut pending));
        }
    }
    if !pending.is_empty() {
        match groups.last_mut() {
            Some(g) => g.extend(pending),
            None => groups.push(pending),
        }
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(states: &[f64], dim: usize, target: &[f64], cfg: RegressionConfig) -> Result<Vec<f64>> {
        let w = vec![1.0 / (states.len() / dim) as f64; states.len() / dim];
        let design = Design { states, dim, weights: &w };
        let mut out = vec![Vec::new()];
        fit(0, &design, &[target], &mut out, &cfg)?;
        Ok(out.pop().unwrap())
    }

    #[test]
    fn polynomial_reproduces_polynomials() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 / 199.0).collect();
        let t: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x + 3.0 * x * x).collect();
        let fit = run(&xs, 1, &t, RegressionConfig::polynomial(2)).unwrap();
        for (a, b) in fit.iter().zip(&t) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_design_falls_back_to_mean() {
        let xs = vec![0.3; 10];
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let fit = run(&xs, 1, &t, RegressionConfig::polynomial(3)).unwrap();
        assert!(fit.iter().all(|&v| (v - 4.5).abs() < 1e-12));
    }

    #[test]
    fn monomial_count() {
        assert_eq!(monomials(1, 3).len(), 4);
        assert_eq!(monomials(2, 2).len(), 6);
        assert_eq!(monomials(3, 2).len(), 10);
    }

    #[test]
    fn two_point_design_with_high_degree_is_rank_deficient_without_ridge() {
        let xs: Vec<f64> = (0..20).map(|i| (i % 2) as f64).collect();
        let t = xs.clone();
        let cfg = RegressionConfig {
            ridge: 0.0,
            ..RegressionConfig::polynomial(3)
        };
        assert!(matches!(run(&xs, 1, &t, cfg), Err(Error::Basis { .. })));
        let fit = run(&xs, 1, &t, RegressionConfig::polynomial(3)).unwrap();
        for (a, b) in fit.iter().zip(&t) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn piecewise_constant_bins_and_merging() {
        let mut xs: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        xs.push(10.0);
        let t: Vec<f64> = xs.iter().map(|&x| if x < 5.0 { 1.0 } else { 3.0 }).collect();
        let fit = run(&xs, 1, &t, RegressionConfig::piecewise_constant(2)).unwrap();
        // The lone far point lands in an underpopulated bin and is merged.
        assert!((fit[0] - (100.0 + 3.0) / 101.0).abs() < 1e-12);
        let cfg = RegressionConfig {
            min_paths_per_bin: 1,
            ..RegressionConfig::piecewise_constant(2)
        };
        let fit = run(&xs, 1, &t, cfg).unwrap();
        assert_eq!(fit[0], 1.0);
        assert_eq!(fit[100], 3.0);
    }

    #[test]
    fn local_linear_is_exact_on_lines() {
        let xs: Vec<f64> = (0..300).map(|i| i as f64 / 299.0).collect();
        let t: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        let cfg = RegressionConfig {
            basis: Basis::LocalLinear { bins: 4 },
            ..Default::default()
        };
        let fit = run(&xs, 1, &t, cfg).unwrap();
        for (a, b) in fit.iter().zip(&t) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn config_validation() {
        assert!(RegressionConfig::polynomial(7).validate().is_err());
        assert!(RegressionConfig::piecewise_constant(0).validate().is_err());
        let neg = RegressionConfig {
            ridge: -1.0,
            ..Default::default()
        };
        assert!(neg.validate().is_err());
    }
}
