//! Turns a configuration into core model objects, and validates it.

use anyhow::{anyhow, Context, Result};
use serde::Serialize;

use rgbsde_core::drivers::AssumptionCheck;
use rgbsde_core::{
    builtin_driver, builtin_hitting, builtin_obstacle, builtin_terminal, validate_problem, CoefficientSet, Domain,
    DriverSpec, ExpSum, HittingRule, HorizonSpec, ObstacleSpec, Params, ProbeBox, ProbeConfig, TimeGrid, WeightSet,
};

use crate::config::{DomainCfg, ExperimentConfig, HorizonCfg, Pipeline, SdeCfg, TreeCfg};

pub fn domain(cfg: &ExperimentConfig) -> Result<Domain> {
    let d = cfg.domain.as_ref().ok_or_else(|| anyhow!("missing [domain]"))?;
    Ok(match d {
        DomainCfg::Interval { a, b } => Domain::interval(*a, *b)?,
        DomainCfg::Ball { center, radius } => Domain::ball(center.clone(), *radius)?,
    })
}

pub fn sde(cfg: &ExperimentConfig) -> Result<&SdeCfg> {
    cfg.sde.as_ref().ok_or_else(|| anyhow!("missing [sde]"))
}

pub fn coefficients(cfg: &ExperimentConfig) -> Result<CoefficientSet> {
    let s = sde(cfg)?;
    Ok(CoefficientSet::constant(s.drift.clone(), s.sigma))
}

pub fn grid(cfg: &ExperimentConfig) -> Result<TimeGrid> {
    let s = sde(cfg)?;
    Ok(TimeGrid::new(s.dt, cfg.n_steps()?)?.with_substeps(s.substeps))
}

/// The configured driver; `manufactured-pde` inherits unset `sigma`, `drift`,
/// `a`, `b` from the SDE and domain sections.
pub fn driver(cfg: &ExperimentConfig) -> Result<DriverSpec> {
    let mut params: Params = cfg.driver.params.clone();
    if cfg.driver.name == "manufactured-pde" {
        if let Some(s) = &cfg.sde {
            params.entry("sigma".into()).or_insert(s.sigma);
            if let Some(&b) = s.drift.first() {
                params.entry("drift".into()).or_insert(b);
            }
        }
        if let Some(DomainCfg::Interval { a, b }) = &cfg.domain {
            params.entry("a".into()).or_insert(*a);
            params.entry("b".into()).or_insert(*b);
        }
    }
    Ok(builtin_driver(&cfg.driver.name, &params)?)
}

pub fn obstacle(cfg: &ExperimentConfig) -> Result<ObstacleSpec> {
    let o = &cfg.obstacle;
    let terminal = builtin_terminal(&o.terminal, &o.terminal_params)?;
    Ok(builtin_obstacle(&o.name, &o.params, terminal)?)
}

pub fn hitting_rule(cfg: &ExperimentConfig) -> Result<HittingRule> {
    match &cfg.horizon {
        Some(HorizonCfg::Hitting { rule, params, .. }) => Ok(builtin_hitting(rule, params)?),
        _ => Err(anyhow!("the pipeline needs horizon.kind = \"hitting\"")),
    }
}

fn exp_sum(terms: &[(f64, f64)]) -> ExpSum {
    ExpSum { terms: terms.to_vec() }
}

pub fn weights(cfg: &ExperimentConfig) -> Result<WeightSet> {
    let w = cfg.weights.as_ref().ok_or_else(|| anyhow!("missing [weights]"))?;
    Ok(WeightSet {
        u: exp_sum(&w.u),
        v: exp_sum(&w.v),
        v_prime: exp_sum(&w.v_prime),
        local_time_rate: w.local_time_rate,
    })
}

/// Horizon used by the assumption probes.
pub fn horizon_spec(cfg: &ExperimentConfig) -> Result<HorizonSpec> {
    Ok(match (&cfg.horizon, &cfg.tree) {
        (Some(HorizonCfg::Deterministic { t }), _) => HorizonSpec::Deterministic { t: *t },
        (Some(HorizonCfg::Hitting { t_cap, .. }), _) => HorizonSpec::Hitting {
            rule: hitting_rule(cfg)?,
            t_cap: *t_cap,
        },
        (Some(HorizonCfg::Infinite { t_max }), _) => HorizonSpec::Infinite { t_max: *t_max },
        (None, Some(TreeCfg::Binomial { levels, dt, .. })) => HorizonSpec::Deterministic {
            t: *levels as f64 * dt,
        },
        // Random trees and the elliptic grid live on unit time.
        (None, _) => HorizonSpec::Deterministic { t: 1.0 },
    })
}

fn state_bounds(cfg: &ExperimentConfig) -> (Vec<f64>, Vec<f64>) {
    match &cfg.domain {
        Some(DomainCfg::Interval { a, b }) => (vec![*a], vec![*b]),
        Some(DomainCfg::Ball { center, radius }) => (
            center.iter().map(|c| c - radius).collect(),
            center.iter().map(|c| c + radius).collect(),
        ),
        None => (vec![0.0], vec![1.0]),
    }
}

pub fn probe_config(cfg: &ExperimentConfig, horizon_end: f64) -> ProbeConfig {
    let p = cfg.probe.clone().unwrap_or_default();
    let (lo, hi) = state_bounds(cfg);
    let mut pc = ProbeConfig::new(ProbeBox {
        t: p.t.unwrap_or((0.0, horizon_end)),
        x_lo: p.x_lo.unwrap_or(lo),
        x_hi: p.x_hi.unwrap_or(hi),
        y: p.y.unwrap_or((-5.0, 5.0)),
        z: p.z.unwrap_or((-5.0, 5.0)),
    });
    if let Some(n) = p.n_samples {
        pc.n_samples = n;
    }
    if let Some(s) = p.seed {
        pc.seed = s;
    }
    pc
}

/// Outcome of `validate`: structural errors, then the assumption probes.
#[derive(Clone, Debug, Serialize)]
pub struct ValidationOutcome {
    pub structural: Vec<String>,
    pub checks: Vec<AssumptionCheck>,
    /// Checks that do not apply to the pipeline, with the reason.
    pub skipped: Vec<(String, String)>,
}

impl ValidationOutcome {
    pub fn passed(&self) -> bool {
        self.structural.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<String> {
        if let Some(s) = self.structural.first() {
            return Some(s.clone());
        }
        self.checks
            .iter()
            .find(|c| !c.passed)
            .map(|c| format!("{}: {}", c.assumption, c.detail))
    }
}

/// Checks that a finite tree with a solution-independent driver does not need:
/// the solver is then an exact backward recursion, with no stability or
/// uniqueness requirement on `(y, z)`.
const TREE_EXEMPT: [&str; 3] = ["beta < 0", "monotonicity of f in y", "monotonicity of g in y"];

pub fn validate(cfg: &ExperimentConfig) -> Result<ValidationOutcome> {
    let structural = cfg.structural_errors();
    if !structural.is_empty() {
        return Ok(ValidationOutcome {
            structural,
            checks: Vec::new(),
            skipped: Vec::new(),
        });
    }
    let mut structural = Vec::new();
    if cfg.sde.is_some() {
        match (domain(cfg), coefficients(cfg)) {
            (Ok(d), Ok(c)) => {
                let s = sde(cfg)?;
                if c.dim() != d.dim() {
                    structural.push(format!("sde dimension {} does not match the domain ({})", c.dim(), d.dim()));
                } else if !d.contains_closure(&s.x0).unwrap_or(false) {
                    structural.push(format!("sde.x0 = {:?} lies outside the domain", s.x0));
                }
            }
            (Err(e), _) | (_, Err(e)) => structural.push(format!("{e:#}")),
        }
        if matches!(cfg.pipeline, Pipeline::RandomHorizon | Pipeline::InfiniteHorizon | Pipeline::FeynmanKac) {
            if let Err(e) = cfg.n_steps() {
                structural.push(format!("{e:#}"));
            }
        }
    }
    if let Err(e) = cfg.solver.validate() {
        structural.push(format!("solver: {e}"));
    }
    if cfg.pipeline == Pipeline::InfiniteHorizon {
        if let Err(e) = weights(cfg).and_then(|w| Ok(rgbsde_core::contraction_constant(&w, 0.0)?)) {
            structural.push(format!("weights: {e:#}"));
        }
    }
    let drv = driver(cfg).context("driver")?;
    let obs = obstacle(cfg).context("obstacle")?;
    let horizon = horizon_spec(cfg).context("horizon")?;
    if !structural.is_empty() {
        return Ok(ValidationOutcome {
            structural,
            checks: Vec::new(),
            skipped: Vec::new(),
        });
    }
    let probe = probe_config(cfg, horizon.end());
    let report = validate_problem(&drv, &obs, &horizon, &probe).context("assumption probes")?;
    let exempt = cfg.pipeline == Pipeline::SnellCrosscheck && drv.is_frozen();
    let mut checks = Vec::new();
    let mut skipped = Vec::new();
    for c in report.checks {
        if exempt && TREE_EXEMPT.contains(&c.assumption.as_str()) {
            skipped.push((
                c.assumption,
                "not needed for a solution-independent driver on a finite tree".into(),
            ));
        } else {
            checks.push(c);
        }
    }
    Ok(ValidationOutcome {
        structural,
        checks,
        skipped,
    })
}
