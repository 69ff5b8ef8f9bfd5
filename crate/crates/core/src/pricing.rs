//! Optimal stopping harness: the payoff
//!
//! `R(theta) = E[ int_0^theta f ds + int_0^theta g dG + h(X_theta) 1{theta < end} + xi 1{theta = end} ]`
//!
//! evaluated on the same carrier and with the same step quadrature as the solver,
//! and the rule `theta_hat = first k with Y_k <= h(X_k)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::drivers::{DriverSpec, HittingRule, ObstacleSpec};
use crate::error::{Error, Result};
use crate::snell::{first_stop, for_each_stopping_rule};
use crate::solver::{effective_f, stop_indices, BoundaryRule, Carrier, SolutionBundle, SolverConfig, TreeCarrier};

/// Contact tolerance for `Y <= h`.
pub const CONTACT_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub enum StoppingRule {
    /// First `k` with `Y_k <= h(X_k)`.
    FromSolution,
    /// Stop at grid time `t`.
    Deterministic { t: f64 },
    /// First hit of a state region, grid end if never.
    Hitting(HittingRule),
    /// Per path, `first` with probability `prob` and `second` otherwise,
    /// drawn independently of the paths.
    Mixture {
        first: Box<StoppingRule>,
        second: Box<StoppingRule>,
        prob: f64,
        seed: u64,
    },
    /// Precomputed stop index per path.
    Explicit { name: String, indices: Vec<usize> },
}

impl StoppingRule {
    pub fn name(&self) -> String {
        match self {
            StoppingRule::FromSolution => "optimal".into(),
            StoppingRule::Deterministic { t } => format!("time:{t}"),
            StoppingRule::Hitting(h) => format!("hit:{}", h.name),
            StoppingRule::Mixture { first, second, prob, .. } => {
                format!("mix({},{},{prob})", first.name(), second.name())
            }
            StoppingRule::Explicit { name, .. } => name.clone(),
        }
    }

    /// Stop index per path, capped at the solution's stop index.
    pub fn indices(&self, carrier: &Carrier<'_>, sol: &SolutionBundle) -> Result<Vec<usize>> {
        let np = carrier.n_paths();
        let n = sol.n_steps;
        let raw = match self {
            StoppingRule::FromSolution => extract_optimal_rule(sol),
            StoppingRule::Deterministic { t } => {
                let k = (0..=n)
                    .find(|&k| carrier.level_time(k).map(|s| (s - t).abs() <= 1e-9 * (1.0 + t.abs())).unwrap_or(false))
                    .ok_or_else(|| Error::Rule(format!("time {t} is not a grid time in [0, {}]", sol.time(0, n))))?;
                vec![k; np]
            }
            StoppingRule::Hitting(h) => stop_indices(carrier, h, n).0,
            StoppingRule::Mixture {
                first,
                second,
                prob,
                seed,
            } => {
                if !(0.0..=1.0).contains(prob) {
                    return Err(Error::Rule(format!("mixture probability {prob} outside [0, 1]")));
                }
                let a = first.indices(carrier, sol)?;
                let b = second.indices(carrier, sol)?;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                a.into_iter()
                    .zip(b)
                    .map(|(a, b)| if rng.random::<f64>() < *prob { a } else { b })
                    .collect()
            }
            StoppingRule::Explicit { indices, .. } => {
                if indices.len() != np {
                    return Err(Error::Dimension {
                        expected: np,
                        got: indices.len(),
                    });
                }
                if let Some(&k) = indices.iter().find(|&&k| k > n) {
                    return Err(Error::Rule(format!("stop index {k} beyond grid end {n}")));
                }
                indices.clone()
            }
        };
        Ok(raw
            .into_iter()
            .enumerate()
            .map(|(p, k)| k.min(sol.stop_index(p)))
            .collect())
    }
}

/// First `k` with `Y_k <= h(X_k) + 1e-12` before the solution's stop index, else that index.
pub fn extract_optimal_rule(sol: &SolutionBundle) -> Vec<usize> {
    (0..sol.n_paths)
        .map(|p| {
            let end = sol.stop_index(p);
            (0..end)
                .find(|&k| sol.y(p, k) <= sol.h(p, k) + CONTACT_TOL)
                .unwrap_or(end)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleEstimate {
    pub rule: String,
    pub r: f64,
    pub stderr: f64,
    /// `R(theta_hat) - R(theta)`.
    pub margin: f64,
    pub dominated_by_opt: bool,
}

/// Pathwise payoff under stop indices `theta`; `sol` supplies `(Y, Z)` for the driver.
pub fn payoff(
    carrier: &Carrier<'_>,
    sol: &SolutionBundle,
    driver: &DriverSpec,
    obstacle: &ObstacleSpec,
    theta: &[usize],
    cfg: &SolverConfig,
) -> Result<(f64, f64, Vec<f64>)> {
    let np = carrier.n_paths();
    if sol.n_paths != np || theta.len() != np {
        return Err(Error::Dimension {
            expected: np,
            got: theta.len().min(sol.n_paths),
        });
    }
    let values: Vec<f64> = (0..np)
        .map(|p| {
            let end = sol.stop_index(p);
            let th = theta[p];
            if th > end {
                return Err(Error::Rule(format!("stop index {th} beyond end {end} on path {p}")));
            }
            let v = single_path_payoff(carrier, sol, driver, obstacle, p, th, cfg);
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let (mean, stderr) = weighted_mean_stderr(carrier, &values);
    Ok((mean, stderr, values))
}

fn weighted_mean_stderr(carrier: &Carrier<'_>, v: &[f64]) -> (f64, f64) {
    let mean: f64 = v.iter().enumerate().map(|(p, x)| carrier.weight(p) * x).sum();
    if carrier.is_exact() || v.len() < 2 {
        return (mean, 0.0);
    }
    let n = v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayoffReport {
    pub y0: f64,
    pub y0_stderr: f64,
    pub r_opt: f64,
    pub r_opt_stderr: f64,
    /// `|Y_0 - R(theta_hat)|`.
    pub gap: f64,
    /// Whether `gap` is within two standard errors (round-off on trees).
    pub gap_ok: bool,
    /// `max_p K_{theta_hat}` over paths.
    pub k_at_opt: f64,
    pub rules: Vec<RuleEstimate>,
}

impl PayoffReport {
    pub fn flagged(&self) -> impl Iterator<Item = &RuleEstimate> {
        self.rules.iter().filter(|r| !r.dominated_by_opt)
    }

    /// Writes `rule,R,stderr,dominated_by_opt`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "rule,R,stderr,dominated_by_opt")?;
        for r in &self.rules {
            writeln!(w, "{},{},{},{}", r.rule, r.r, r.stderr, r.dominated_by_opt)?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "y0": self.y0,
            "r_opt": self.r_opt,
            "gap": self.gap,
        }))?)
    }
}

fn round_off(x: f64) -> f64 {
    1e-10 * (1.0 + x.abs())
}

/// Evaluates `R(theta_hat)` and every candidate, flagging candidates above
/// `R(theta_hat) + 2 sqrt(se_opt^2 + se^2)`.
pub fn optimality_test(
    sol: &SolutionBundle,
    carrier: &Carrier<'_>,
    driver: &DriverSpec,
    obstacle: &ObstacleSpec,
    candidates: &[StoppingRule],
    cfg: &SolverConfig,
) -> Result<PayoffReport> {
    if candidates.is_empty() {
        return Err(Error::Argument("no candidate rules".into()));
    }
    let opt = extract_optimal_rule(sol);
    let (r_opt, se_opt, _) = payoff(carrier, sol, driver, obstacle, &opt, cfg)?;
    let k_at_opt = opt
        .iter()
        .enumerate()
        .map(|(p, &k)| sol.k(p, k))
        .fold(0.0f64, f64::max);
    let mut rules = Vec::with_capacity(candidates.len());
    for c in candidates {
        let theta = c.indices(carrier, sol)?;
        let (r, se, _) = payoff(carrier, sol, driver, obstacle, &theta, cfg)?;
        let slack = 2.0 * (se_opt * se_opt + se * se).sqrt() + round_off(r_opt);
        rules.push(RuleEstimate {
            rule: c.name(),
            r,
            stderr: se,
            margin: r_opt - r,
            dominated_by_opt: r <= r_opt + slack,
        });
    }
    let y0 = sol.y0();
    let gap = (y0 - r_opt).abs();
    Ok(PayoffReport {
        y0,
        y0_stderr: sol.y0_stderr(),
        r_opt,
        r_opt_stderr: se_opt,
        gap,
        gap_ok: gap <= 2.0 * sol.y0_stderr().max(se_opt) + round_off(y0),
        k_at_opt,
        rules,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExhaustiveReport {
    pub n_rules: usize,
    pub y0: f64,
    pub r_opt: f64,
    pub max_r: f64,
    /// Rules with `R(theta) > R(theta_hat)` beyond round-off.
    pub violations: usize,
    pub k_at_opt: f64,
}

/// Compares `R(theta_hat)` with `R(theta)` for every stopping time of a tree.
pub fn exhaustive_tree_check(
    sol: &SolutionBundle,
    tree: &TreeCarrier,
    driver: &DriverSpec,
    obstacle: &ObstacleSpec,
    cfg: &SolverConfig,
) -> Result<ExhaustiveReport> {
    let carrier = Carrier::Tree(tree);
    let np = carrier.n_paths();
    let n = sol.n_steps;
    // value[p][k] = running cost before k plus the reward for stopping at k.
    let mut value = vec![vec![0.0; n + 1]; np];
    for p in 0..np {
        for k in 0..=n.min(sol.stop_index(p)) {
            value[p][k] = single_path_payoff(&carrier, sol, driver, obstacle, p, k, cfg);
        }
    }
    let opt = extract_optimal_rule(sol);
    let r_opt: f64 = (0..np).map(|p| carrier.weight(p) * value[p][opt[p]]).sum();
    let k_at_opt = opt.iter().enumerate().map(|(p, &k)| sol.k(p, k)).fold(0.0f64, f64::max);
    let mut max_r = f64::NEG_INFINITY;
    let mut violations = 0;
    let tol = round_off(r_opt);
    let n_rules = for_each_stopping_rule(tree.lattice(), |set| {
        let r: f64 = tree
            .paths()
            .iter()
            .enumerate()
            .map(|(p, path)| path.weight * value[p][first_stop(path, set).min(sol.stop_index(p))])
            .sum();
        max_r = max_r.max(r);
        if r > r_opt + tol {
            violations += 1;
        }
    })?;
    Ok(ExhaustiveReport {
        n_rules,
        y0: sol.y0(),
        r_opt,
        max_r,
        violations,
        k_at_opt,
    })
}

fn single_path_payoff(
    carrier: &Carrier<'_>,
    sol: &SolutionBundle,
    driver: &DriverSpec,
    obstacle: &ObstacleSpec,
    p: usize,
    th: usize,
    cfg: &SolverConfig,
) -> f64 {
    let end = sol.stop_index(p);
    let mut v = 0.0;
    for k in 0..th {
        let (t, dt, dg) = (carrier.time(p, k), carrier.dt(p, k), carrier.dg(p, k));
        let x = carrier.state(p, k);
        v += effective_f(driver, cfg.time_rule, t, dt, x, sol.y(p, k), sol.z(p, k)) * dt;
        if dg > 0.0 {
            v += match cfg.boundary {
                BoundaryRule::Implicit => driver.g(t, x, sol.y(p, k)),
                BoundaryRule::Contact => driver.g(
                    carrier.time(p, k + 1),
                    &carrier.contact_point(p, k + 1),
                    sol.y(p, k + 1),
                ),
            } * dg;
        }
    }
    let x = carrier.state(p, th);
    v + if th < end { obstacle.h(x) } else { obstacle.xi(x) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::TerminalRule;
    use crate::sde::{simulate_paths, CoefficientSet, TimeGrid};
    use crate::snell::{optimal_stop, random_tree, snell_envelope_of, RandomTreeSpec, TreeDrivers, reflected_from_snell};
    use crate::solver::{solve_finite_horizon, solve_tree, TreeCarrier};
    use crate::Domain;
    use std::sync::Arc;

    fn zero_terminal_obstacle(level: f64) -> ObstacleSpec {
        ObstacleSpec::constant(level, TerminalRule::Explicit(Arc::new(|_| 0.0)))
    }

    #[test]
    fn unit_driver_stops_at_grid_end() {
        let dom = Domain::interval(-1.0, 1.0).unwrap();
        let b = simulate_paths(&dom, &CoefficientSet::constant(vec![0.0], 0.0), &[0.0], TimeGrid::new(0.1, 10).unwrap(), 4, 1).unwrap();
        let f = DriverSpec::new("one", Arc::new(|_, _, _, _| 1.0), Arc::new(|_, _, _| 0.0)).independent_of_solution();
        let o = zero_terminal_obstacle(0.0);
        let cfg = SolverConfig::default();
        let s = solve_finite_horizon(&b, &f, &o, 1.0, &cfg).unwrap();
        assert_eq!(extract_optimal_rule(&s), vec![10; 4]);
        let c = Carrier::Paths(&b);
        let (r, _, _) = payoff(&c, &s, &f, &o, &[10; 4], &cfg).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        let rep = optimality_test(&s, &c, &f, &o, &[StoppingRule::Deterministic { t: 0.5 }], &cfg).unwrap();
        assert!((rep.rules[0].r - 0.5).abs() < 1e-12);
        assert!(rep.rules[0].dominated_by_opt);
        assert!(optimality_test(&s, &c, &f, &o, &[], &cfg).is_err());
        assert!(matches!(
            StoppingRule::Deterministic { t: 0.55 }.indices(&c, &s),
            Err(Error::Rule(_))
        ));
    }

    #[test]
    fn zero_problem_stops_immediately() {
        let dom = Domain::interval(-1.0, 1.0).unwrap();
        let b = simulate_paths(&dom, &CoefficientSet::constant(vec![0.0], 0.3), &[0.0], TimeGrid::new(0.1, 10).unwrap(), 50, 1).unwrap();
        let o = zero_terminal_obstacle(0.0);
        let s = solve_finite_horizon(&b, &DriverSpec::zero(), &o, 1.0, &SolverConfig::default()).unwrap();
        assert!(extract_optimal_rule(&s).iter().all(|&k| k == 0));
        let rep = optimality_test(&s, &Carrier::Paths(&b), &DriverSpec::zero(), &o, &[StoppingRule::Deterministic { t: 0.3 }], &SolverConfig::default()).unwrap();
        assert_eq!(rep.r_opt, 0.0);
        assert_eq!(rep.flagged().count(), 0);
    }

    #[test]
    fn tree_rule_matches_snell_and_dominates_all_rules() {
        for seed in 0..4 {
            let l = random_tree(&RandomTreeSpec::new(3, 2), seed).unwrap();
            let f = DriverSpec::new("tf", Arc::new(|_, x, _, _| x[0]), Arc::new(|_, _, _| 0.5)).independent_of_solution();
            let o = ObstacleSpec::new("h", Arc::new(|x: &[f64]| x[0].abs() - 0.3), TerminalRule::Explicit(Arc::new(|x: &[f64]| x[0])));
            let data = TreeDrivers::evaluate(&l, &f, &o).unwrap();
            let refl = reflected_from_snell(&l, &data).unwrap();
            let snell = snell_envelope_of(&l, &refl.snell.reward).unwrap();
            let os = optimal_stop(&snell, &l).unwrap();
            let tree = TreeCarrier::new(l.clone()).unwrap();
            let cfg = SolverConfig::default();
            let s = solve_tree(&tree, &f, &o, &cfg).unwrap();
            assert_eq!(extract_optimal_rule(&s), os.stop_level);
            let mut cands = Vec::new();
            for_each_stopping_rule(&l, |set| {
                let idx = tree.paths().iter().map(|p| first_stop(p, set)).collect();
                cands.push(StoppingRule::Explicit { name: format!("r{}", cands.len()), indices: idx });
            })
            .unwrap();
            let c = Carrier::Tree(&tree);
            let rep = optimality_test(&s, &c, &f, &o, &cands, &cfg).unwrap();
            assert_eq!(rep.flagged().count(), 0);
            assert!((rep.r_opt - snell.envelope[0]).abs() < 1e-10);
            assert!(rep.gap_ok);
            assert_eq!(rep.k_at_opt, 0.0);
            let ex = exhaustive_tree_check(&s, &tree, &f, &o, &cfg).unwrap();
            assert_eq!(ex.n_rules, cands.len());
            assert_eq!(ex.violations, 0);
            assert!((ex.max_r - ex.r_opt).abs() < 1e-10);
        }
    }
}
