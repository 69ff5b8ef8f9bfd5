//! Experiment configuration (TOML).

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Result};
use serde::{Deserialize, Serialize};

use rgbsde_core::solver::PicardConfig;
use rgbsde_core::{GridSolveConfig, SolverConfig, SweepOrder};

pub type ParamMap = BTreeMap<String, f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    SnellCrosscheck,
    AmericanTree,
    RandomHorizon,
    InfiniteHorizon,
    NeumannPde,
    FeynmanKac,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pipeline: Pipeline,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output: OutputCfg,
    pub domain: Option<DomainCfg>,
    pub sde: Option<SdeCfg>,
    pub driver: DriverCfg,
    pub obstacle: ObstacleCfg,
    pub horizon: Option<HorizonCfg>,
    pub weights: Option<WeightsCfg>,
    #[serde(default)]
    pub solver: SolverConfig,
    pub picard: Option<PicardConfig>,
    pub tree: Option<TreeCfg>,
    pub pde: Option<PdeCfg>,
    pub probe: Option<ProbeCfg>,
    pub pricing: Option<PricingCfg>,
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputCfg {
    pub dir: Option<PathBuf>,
    /// Paths written to `solution.csv`.
    #[serde(default = "default_csv_paths")]
    pub csv_paths: usize,
}

fn default_csv_paths() -> usize {
    20
}

impl Default for OutputCfg {
    fn default() -> Self {
        OutputCfg {
            dir: None,
            csv_paths: default_csv_paths(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainCfg {
    Interval { a: f64, b: f64 },
    Ball { center: Vec<f64>, radius: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeCfg {
    pub x0: Vec<f64>,
    pub drift: Vec<f64>,
    pub sigma: f64,
    pub dt: f64,
    /// Defaults to the horizon end divided by `dt`.
    pub n_steps: Option<usize>,
    #[serde(default = "one")]
    pub substeps: usize,
    pub n_paths: usize,
    /// Paths simulated and solved together; estimates are pooled across batches.
    pub batch: Option<usize>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverCfg {
    pub name: String,
    #[serde(default)]
    pub params: ParamMap,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleCfg {
    pub name: String,
    #[serde(default)]
    pub params: ParamMap,
    #[serde(default = "default_terminal")]
    pub terminal: String,
    #[serde(default)]
    pub terminal_params: ParamMap,
}

fn default_terminal() -> String {
    "obstacle".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HorizonCfg {
    Deterministic {
        t: f64,
    },
    Hitting {
        rule: String,
        #[serde(default)]
        params: ParamMap,
        t_cap: f64,
        /// Truncation indices for the horizon-sensitivity table.
        #[serde(default)]
        sequence: Vec<usize>,
    },
    Infinite {
        t_max: f64,
    },
}

impl HorizonCfg {
    pub fn end(&self) -> f64 {
        match self {
            HorizonCfg::Deterministic { t } => *t,
            HorizonCfg::Hitting { t_cap, .. } => *t_cap,
            HorizonCfg::Infinite { t_max } => *t_max,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsCfg {
    /// `(coefficient, rate)` pairs of `sum c exp(-r t)`.
    #[serde(default)]
    pub u: Vec<(f64, f64)>,
    #[serde(default)]
    pub v: Vec<(f64, f64)>,
    #[serde(default)]
    pub v_prime: Vec<(f64, f64)>,
    #[serde(default = "default_rate")]
    pub local_time_rate: f64,
}

fn default_rate() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TreeCfg {
    Random {
        levels: usize,
        #[serde(default = "one")]
        min_children: usize,
        max_children: usize,
        #[serde(default = "default_contact")]
        contact_prob: f64,
        #[serde(default = "default_count")]
        count: usize,
    },
    Binomial {
        x0: f64,
        up: f64,
        down: f64,
        p_up: f64,
        levels: usize,
        dt: f64,
        /// Enumerate every stopping time (feasible up to 5 binary levels).
        #[serde(default = "yes")]
        exhaustive: bool,
    },
}

fn default_contact() -> f64 {
    0.3
}
fn default_count() -> usize {
    20
}
fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeCfg {
    pub n_grid: usize,
    #[serde(default = "default_pde_tol")]
    pub tol: f64,
    #[serde(default = "default_pde_iters")]
    pub max_iters: usize,
    pub omega: Option<f64>,
    #[serde(default = "default_order")]
    pub order: SweepOrder,
    #[serde(default = "default_c_disc")]
    pub c_disc: f64,
    /// Probe points for the Monte Carlo comparison.
    #[serde(default)]
    pub probes: Vec<f64>,
    /// Closed-form solution to report errors against (`square` for `x^2`).
    pub reference: Option<String>,
    /// Additive error budget per probe, on top of `3 stderr`.
    pub tolerance: Option<f64>,
}

fn default_pde_tol() -> f64 {
    1e-10
}
fn default_pde_iters() -> usize {
    200_000
}
fn default_order() -> SweepOrder {
    SweepOrder::Lexicographic
}
fn default_c_disc() -> f64 {
    1.0
}

impl PdeCfg {
    pub fn solve_config(&self) -> GridSolveConfig {
        GridSolveConfig {
            tol: self.tol,
            max_iters: self.max_iters,
            omega: self.omega,
            order: self.order,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeCfg {
    pub t: Option<(f64, f64)>,
    pub x_lo: Option<Vec<f64>>,
    pub x_hi: Option<Vec<f64>>,
    pub y: Option<(f64, f64)>,
    pub z: Option<(f64, f64)>,
    pub n_samples: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingCfg {
    /// Deterministic candidate stopping times.
    #[serde(default)]
    pub times: Vec<f64>,
}

/// Parses TOML text into a raw value, applying `key.path=value` overrides.
pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<toml::Value> {
    let mut value: toml::Value = toml::from_str(text).map_err(|e| anyhow!("{e}"))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    Ok(value)
}

pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override '{spec}' is not of the form key=value"))?;
    let parsed = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| anyhow!("override '{key}': '{}' is not a table", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    bail!("empty override key")
}

impl ExperimentConfig {
    pub fn from_value(value: toml::Value) -> Result<Self> {
        value.try_into().map_err(|e: toml::de::Error| anyhow!("{e}"))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow!("{e}"))
    }

    /// Range checks that do not need the model objects.
    pub fn structural_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let need = |name: &str, present: bool, errs: &mut Vec<String>| {
            if !present {
                errs.push(format!("pipeline {:?} needs a [{name}] section", self.pipeline));
            }
        };
        match self.pipeline {
            Pipeline::SnellCrosscheck | Pipeline::AmericanTree => need("tree", self.tree.is_some(), &mut errs),
            Pipeline::RandomHorizon | Pipeline::InfiniteHorizon => {
                need("domain", self.domain.is_some(), &mut errs);
                need("sde", self.sde.is_some(), &mut errs);
                need("horizon", self.horizon.is_some(), &mut errs);
            }
            Pipeline::NeumannPde => {
                need("domain", self.domain.is_some(), &mut errs);
                need("sde", self.sde.is_some(), &mut errs);
                need("pde", self.pde.is_some(), &mut errs);
            }
            Pipeline::FeynmanKac => {
                need("domain", self.domain.is_some(), &mut errs);
                need("sde", self.sde.is_some(), &mut errs);
                need("pde", self.pde.is_some(), &mut errs);
                need("horizon", self.horizon.is_some(), &mut errs);
            }
        }
        match (self.pipeline, &self.horizon) {
            (Pipeline::RandomHorizon, Some(h)) if !matches!(h, HorizonCfg::Hitting { .. }) => {
                errs.push("random_horizon needs horizon.kind = \"hitting\"".into())
            }
            (Pipeline::InfiniteHorizon, Some(h)) if !matches!(h, HorizonCfg::Infinite { .. }) => {
                errs.push("infinite_horizon needs horizon.kind = \"infinite\"".into())
            }
            (Pipeline::FeynmanKac, Some(h)) if !matches!(h, HorizonCfg::Deterministic { .. }) => {
                errs.push("feynman_kac needs horizon.kind = \"deterministic\"".into())
            }
            _ => {}
        }
        match (self.pipeline, &self.tree) {
            (Pipeline::SnellCrosscheck, Some(TreeCfg::Binomial { .. })) => {
                errs.push("snell_crosscheck needs tree.kind = \"random\"".into())
            }
            (Pipeline::AmericanTree, Some(TreeCfg::Random { .. })) => {
                errs.push("american_tree needs tree.kind = \"binomial\"".into())
            }
            _ => {}
        }
        if self.pipeline == Pipeline::InfiniteHorizon && self.weights.is_none() {
            errs.push("infinite_horizon needs a [weights] section".into());
        }
        if self.seeds.is_empty() {
            errs.push("seeds must not be empty".into());
        }
        if let Some(s) = &self.sde {
            if !(s.dt > 0.0 && s.dt.is_finite()) {
                errs.push(format!("sde.dt must be positive, got {}", s.dt));
            }
            if s.n_paths == 0 {
                errs.push("sde.n_paths must be positive".into());
            }
            if s.substeps == 0 {
                errs.push("sde.substeps must be positive".into());
            }
            if s.batch == Some(0) {
                errs.push("sde.batch must be positive".into());
            }
            if s.batch.is_some() && self.pipeline != Pipeline::FeynmanKac {
                errs.push("sde.batch is only used by the feynman_kac pipeline".into());
            }
            if !(s.sigma.is_finite()) {
                errs.push("sde.sigma must be finite".into());
            }
            if s.x0.len() != s.drift.len() {
                errs.push(format!("sde.x0 has {} entries, sde.drift {}", s.x0.len(), s.drift.len()));
            }
        }
        if let Some(h) = &self.horizon {
            if !(h.end() > 0.0 && h.end().is_finite()) {
                errs.push(format!("horizon end must be positive, got {}", h.end()));
            }
        }
        match &self.tree {
            Some(TreeCfg::Random { levels, .. }) | Some(TreeCfg::Binomial { levels, .. }) if *levels == 0 => {
                errs.push("tree.levels must be positive".into())
            }
            Some(TreeCfg::Binomial { p_up, dt, .. }) if !(0.0..=1.0).contains(p_up) || !(*dt > 0.0) => {
                errs.push("tree.p_up must lie in [0, 1] and tree.dt must be positive".into())
            }
            _ => {}
        }
        if let Some(p) = &self.pde {
            if p.n_grid < 3 {
                errs.push("pde.n_grid must be at least 3".into());
            }
            if !(p.tol > 0.0) {
                errs.push("pde.tol must be positive".into());
            }
            if let Some(r) = p.reference.as_deref() {
                if r != "square" {
                    errs.push(format!("unknown pde.reference '{r}' (known: square)"));
                }
            }
            if self.pipeline == Pipeline::FeynmanKac && p.probes.is_empty() {
                errs.push("feynman_kac needs at least one pde.probes point".into());
            }
        }
        errs
    }

    /// Number of grid steps for the Monte Carlo pipelines.
    pub fn n_steps(&self) -> Result<usize> {
        let sde = self.sde.as_ref().ok_or_else(|| anyhow!("missing [sde]"))?;
        if let Some(n) = sde.n_steps {
            return Ok(n);
        }
        let end = self.horizon.as_ref().ok_or_else(|| anyhow!("missing [horizon]"))?.end();
        let n = (end / sde.dt).round();
        if !((n * sde.dt - end).abs() <= 1e-9 * end.max(1.0)) || n < 1.0 {
            bail!("horizon end {end} is not a multiple of sde.dt = {}", sde.dt);
        }
        Ok(n as usize)
    }
}
