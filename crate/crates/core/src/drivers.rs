//! Problem data: drivers `f`, `g`, obstacle `h`, terminal rule and horizon,
//! with sampled probes of the monotonicity, growth and ordering assumptions.
//!
//! A probe pass is evidence only. A probe fail is a certificate: the report
//! carries the first violating sample.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(t, x, y, z) -> f`.
pub type DriverFn = Arc<dyn Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync>;
/// `(t, x, y) -> g`.
pub type BoundaryFn = Arc<dyn Fn(f64, &[f64], f64) -> f64 + Send + Sync>;
pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type StateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type StatePredicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

#[derive(Clone)]
pub struct DriverSpec {
    pub name: String,
    pub f: DriverFn,
    pub g: BoundaryFn,
    /// Monotonicity of `f` in `y`.
    pub alpha: f64,
    /// Monotonicity of `g` in `y`; must be negative.
    pub beta: f64,
    /// Lipschitz constant of `f` in `z` (also the growth constant).
    pub k_f: f64,
    pub lambda: f64,
    pub mu: f64,
    pub growth_phi: TimeFn,
    pub growth_psi: TimeFn,
    pub depends_on_y: bool,
    pub depends_on_z: bool,
}

impl fmt::Debug for DriverSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriverSpec")
            .field("name", &self.name)
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .field("k_f", &self.k_f)
            .field("lambda", &self.lambda)
            .field("mu", &self.mu)
            .field("depends_on_y", &self.depends_on_y)
            .field("depends_on_z", &self.depends_on_z)
            .finish_non_exhaustive()
    }
}

impl DriverSpec {
    /// Driver with the given evaluators and admissible default constants
    /// (`alpha = 0`, `beta = -1`, `k_f = 1`, `lambda`, `mu` just above their bounds).
    pub fn new(name: impl Into<String>, f: DriverFn, g: BoundaryFn) -> Self {
        DriverSpec {
            name: name.into(),
            f,
            g,
            alpha: 0.0,
            beta: -1.0,
            k_f: 1.0,
            lambda: 1.1,
            mu: 2.1,
            growth_phi: Arc::new(|_| 1.0),
            growth_psi: Arc::new(|_| 1.0),
            depends_on_y: true,
            depends_on_z: true,
        }
    }

    pub fn zero() -> Self {
        DriverSpec::new("zero", Arc::new(|_, _, _, _| 0.0), Arc::new(|_, _, _| 0.0))
            .independent_of_solution()
    }

    pub fn with_constants(mut self, alpha: f64, beta: f64, k_f: f64) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self.k_f = k_f;
        self.lambda = 2.0 * alpha.abs() + k_f * k_f + 0.1;
        self.mu = 2.0 * beta.abs() + 0.1;
        self
    }

    pub fn with_weights(mut self, lambda: f64, mu: f64) -> Self {
        self.lambda = lambda;
        self.mu = mu;
        self
    }

    pub fn with_growth(mut self, phi: TimeFn, psi: TimeFn) -> Self {
        self.growth_phi = phi;
        self.growth_psi = psi;
        self
    }

    pub fn with_dependence(mut self, on_y: bool, on_z: bool) -> Self {
        self.depends_on_y = on_y;
        self.depends_on_z = on_z;
        self
    }

    pub fn independent_of_solution(self) -> Self {
        self.with_dependence(false, false)
    }

    pub fn is_frozen(&self) -> bool {
        !self.depends_on_y && !self.depends_on_z
    }

    #[inline]
    pub fn f(&self, t: f64, x: &[f64], y: f64, z: &[f64]) -> f64 {
        (self.f)(t, x, y, z)
    }

    #[inline]
    pub fn g(&self, t: f64, x: &[f64], y: f64) -> f64 {
        (self.g)(t, x, y)
    }
}

/// Finite sum `sum_i c_i exp(-r_i t)` with closed-form tail integrals.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpSum {
    pub terms: Vec<(f64, f64)>,
}

impl ExpSum {
    pub fn zero() -> Self {
        ExpSum { terms: Vec::new() }
    }

    pub fn exp(coef: f64, rate: f64) -> Self {
        ExpSum {
            terms: vec![(coef, rate)],
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.terms.iter().map(|(c, r)| c * (-r * t).exp()).sum()
    }

    /// `int_{t0}^inf self(s) ds`.
    pub fn tail_integral(&self, t0: f64) -> Result<f64> {
        let mut total = 0.0;
        for &(c, r) in &self.terms {
            if c == 0.0 {
                continue;
            }
            if !(r > 0.0) {
                return Err(Error::Divergence(format!("term {c} exp(-{r} t) is not integrable")));
            }
            total += c / r * (-r * t0).exp();
        }
        Ok(total)
    }

    /// `int_{t0}^inf self(s)^2 ds`.
    pub fn tail_integral_of_square(&self, t0: f64) -> Result<f64> {
        let mut total = 0.0;
        for &(ci, ri) in &self.terms {
            for &(cj, rj) in &self.terms {
                let c = ci * cj;
                if c == 0.0 {
                    continue;
                }
                let r = ri + rj;
                if !(r > 0.0) {
                    return Err(Error::Divergence("squared weight is not integrable".into()));
                }
                total += c / r * (-r * t0).exp();
            }
        }
        Ok(total)
    }
}

/// Deterministic weights `u`, `v`, `v'` bounding the Lipschitz moduli of the drivers:
/// `|f(t,y,z) - f(t,y',z')| <= v_t |y-y'| + v'_t |z-z'|`, `|g(t,y) - g(t,y')| <= u_t |y-y'|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub u: ExpSum,
    pub v: ExpSum,
    pub v_prime: ExpSum,
    /// Configured bound on `dG/dt`, used to turn `int u dG` into `rate * int u dt`.
    pub local_time_rate: f64,
}

impl WeightSet {
    pub fn zero() -> Self {
        WeightSet {
            u: ExpSum::zero(),
            v: ExpSum::zero(),
            v_prime: ExpSum::zero(),
            local_time_rate: 1.0,
        }
    }
}

/// `24 [ (int_{T0}^inf v ds + int_{T0}^inf u dG)^2 + int_{T0}^inf v'^2 ds ]`.
pub fn contraction_constant(weights: &WeightSet, t0: f64) -> Result<f64> {
    if !(t0 >= 0.0) {
        return Err(Error::Argument(format!("T0 must be nonnegative, got {t0}")));
    }
    // With no boundary contact the u-term is absent, even when u is not integrable.
    let boundary = if weights.local_time_rate == 0.0 {
        0.0
    } else {
        weights.local_time_rate * weights.u.tail_integral(t0)?
    };
    let lin = weights.v.tail_integral(t0)? + boundary;
    let quad = weights.v_prime.tail_integral_of_square(t0)?;
    Ok(24.0 * (lin * lin + quad))
}

#[derive(Clone)]
pub enum TerminalRule {
    /// `xi = h(X_tau)`.
    ObstacleAtStop,
    Explicit(StateFn),
}

#[derive(Clone)]
pub struct ObstacleSpec {
    pub name: String,
    pub h: StateFn,
    pub growth_degree: u32,
    pub terminal: TerminalRule,
}

impl fmt::Debug for ObstacleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terminal = match self.terminal {
            TerminalRule::ObstacleAtStop => "h(X_tau)",
            TerminalRule::Explicit(_) => "explicit",
        };
        f.debug_struct("ObstacleSpec")
            .field("name", &self.name)
            .field("growth_degree", &self.growth_degree)
            .field("terminal", &terminal)
            .finish_non_exhaustive()
    }
}

/// Level of the inactive obstacle.
pub const SENTINEL_LEVEL: f64 = -1.0e6;

impl ObstacleSpec {
    pub fn new(name: impl Into<String>, h: StateFn, terminal: TerminalRule) -> Self {
        ObstacleSpec {
            name: name.into(),
            h,
            growth_degree: 0,
            terminal,
        }
    }

    pub fn constant(level: f64, terminal: TerminalRule) -> Self {
        ObstacleSpec::new(format!("constant({level})"), Arc::new(move |_| level), terminal)
    }

    /// Obstacle fixed at `-1e6` with constant terminal value `xi`.
    pub fn sentinel(xi: f64) -> Self {
        let mut o = ObstacleSpec::constant(SENTINEL_LEVEL, TerminalRule::Explicit(Arc::new(move |_| xi)));
        o.name = "sentinel".into();
        o
    }

    #[inline]
    pub fn h(&self, x: &[f64]) -> f64 {
        (self.h)(x)
    }

    #[inline]
    pub fn xi(&self, x: &[f64]) -> f64 {
        match &self.terminal {
            TerminalRule::ObstacleAtStop => (self.h)(x),
            TerminalRule::Explicit(xi) => xi(x),
        }
    }

    /// First terminal state with `h(x) > xi(x) + 1e-12`.
    pub fn terminal_violation<'a, I>(&self, states: I) -> Option<Vec<f64>>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        states
            .into_iter()
            .find(|x| self.h(x) > self.xi(x) + 1e-12)
            .map(|x| x.to_vec())
    }
}

#[derive(Clone)]
pub struct HittingRule {
    pub name: String,
    pub predicate: StatePredicate,
}

impl HittingRule {
    pub fn new(name: impl Into<String>, predicate: StatePredicate) -> Self {
        HittingRule {
            name: name.into(),
            predicate,
        }
    }

    pub fn never() -> Self {
        HittingRule::new("never", Arc::new(|_| false))
    }

    pub fn immediately() -> Self {
        HittingRule::new("immediately", Arc::new(|_| true))
    }
}

impl fmt::Debug for HittingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HittingRule({})", self.name)
    }
}

#[derive(Clone, Debug)]
pub enum HorizonSpec {
    Deterministic { t: f64 },
    /// `tau = first hitting time of the rule`, capped at `t_cap`.
    Hitting { rule: HittingRule, t_cap: f64 },
    /// Infinite horizon truncated at `t_max`.
    Infinite { t_max: f64 },
}

impl HorizonSpec {
    pub fn end(&self) -> f64 {
        match self {
            HorizonSpec::Deterministic { t } => *t,
            HorizonSpec::Hitting { t_cap, .. } => *t_cap,
            HorizonSpec::Infinite { t_max } => *t_max,
        }
    }
}

/// Sampling box for the assumption probes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeBox {
    pub t: (f64, f64),
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub y: (f64, f64),
    pub z: (f64, f64),
}

impl ProbeBox {
    pub fn unit(dim: usize) -> Self {
        ProbeBox {
            t: (0.0, 1.0),
            x_lo: vec![0.0; dim],
            x_hi: vec![1.0; dim],
            y: (-5.0, 5.0),
            z: (-5.0, 5.0),
        }
    }

    fn check(&self) -> Result<()> {
        let all = [self.t.0, self.t.1, self.y.0, self.y.1, self.z.0, self.z.1]
            .into_iter()
            .chain(self.x_lo.iter().copied())
            .chain(self.x_hi.iter().copied());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("probe box bounds must be finite".into()));
        }
        if self.x_lo.len() != self.x_hi.len() {
            return Err(Error::Dimension {
                expected: self.x_lo.len(),
                got: self.x_hi.len(),
            });
        }
        Ok(())
    }

    fn sample_x(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.x_lo
            .iter()
            .zip(&self.x_hi)
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: f64,
    pub y_prime: f64,
    pub z: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityMargins {
    /// `max (y-y')(f(y)-f(y')) - alpha |y-y'|^2` over sampled pairs.
    pub f_margin: f64,
    /// `max (y-y')(g(y)-g(y')) - beta |y-y'|^2` over sampled pairs.
    pub g_margin: f64,
    pub f_witness: Option<Witness>,
    pub g_witness: Option<Witness>,
}

impl MonotonicityMargins {
    pub fn passes(&self, tol: f64) -> bool {
        self.f_margin <= tol && self.g_margin <= tol
    }
}

/// Samples pairs `(y, y')` and records the worst monotonicity margins of `f` and `g`.
/// Samples are drawn sequentially from one stream, so a smaller `n_samples`
/// probes a prefix of the larger sample.
pub fn monotonicity_probe(
    driver: &DriverSpec,
    sample_box: &ProbeBox,
    n_samples: usize,
    seed: u64,
) -> Result<MonotonicityMargins> {
    sample_box.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = MonotonicityMargins {
        f_margin: f64::NEG_INFINITY,
        g_margin: f64::NEG_INFINITY,
        f_witness: None,
        g_witness: None,
    };
    let zdim = sample_box.x_lo.len().max(1);
    for _ in 0..n_samples {
        let t = uniform(&mut rng, sample_box.t);
        let x = sample_box.sample_x(&mut rng);
        let y = uniform(&mut rng, sample_box.y);
        let yp = uniform(&mut rng, sample_box.y);
        let z: Vec<f64> = (0..zdim).map(|_| uniform(&mut rng, sample_box.z)).collect();
        let dy = y - yp;
        let fm = dy * (driver.f(t, &x, y, &z) - driver.f(t, &x, yp, &z)) - driver.alpha * dy * dy;
        let gm = dy * (driver.g(t, &x, y) - driver.g(t, &x, yp)) - driver.beta * dy * dy;
        if !fm.is_finite() || !gm.is_finite() {
            return Err(Error::Evaluation {
                point: format!("t={t}, x={x:?}, y={y}, y'={yp}, z={z:?}"),
                reason: "non-finite driver value".into(),
            });
        }
        let witness = || Witness {
            t,
            x: x.clone(),
            y,
            y_prime: yp,
            z: z.clone(),
        };
        if fm > out.f_margin {
            out.f_margin = fm;
            out.f_witness = Some(witness());
        }
        if gm > out.g_margin {
            out.g_margin = gm;
            out.g_witness = Some(witness());
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub assumption: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| !c.passed)
    }

    fn push(&mut self, assumption: &str, passed: bool, detail: String) {
        self.checks.push(AssumptionCheck {
            assumption: assumption.into(),
            passed,
            detail,
        });
    }
}

/// Probe configuration for [`validate_problem`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub sample_box: ProbeBox,
    pub n_samples: usize,
    pub seed: u64,
    pub tol: f64,
}

impl ProbeConfig {
    pub fn new(sample_box: ProbeBox) -> Self {
        ProbeConfig {
            sample_box,
            n_samples: 10_000,
            seed: 0,
            tol: 1e-9,
        }
    }
}

/// Checks the structural constants, monotonicity, growth bounds and the
/// terminal ordering `h <= xi` on sampled states.
pub fn validate_problem(
    driver: &DriverSpec,
    obstacle: &ObstacleSpec,
    horizon: &HorizonSpec,
    probe: &ProbeConfig,
) -> Result<ValidationReport> {
    let mut report = ValidationReport { checks: Vec::new() };

    report.push(
        "beta < 0",
        driver.beta < 0.0,
        if driver.beta < 0.0 {
            format!("beta = {}", driver.beta)
        } else {
            format!("beta must be negative (beta = {})", driver.beta)
        },
    );
    report.push(
        "K > 0",
        driver.k_f > 0.0,
        format!("K = {}", driver.k_f),
    );
    let lam_bound = 2.0 * driver.alpha.abs() + driver.k_f * driver.k_f;
    report.push(
        "lambda > 2|alpha| + K^2",
        driver.lambda > lam_bound,
        format!("lambda = {}, bound = {lam_bound}", driver.lambda),
    );
    let mu_bound = 2.0 * driver.beta.abs();
    report.push(
        "mu > 2|beta|",
        driver.mu > mu_bound,
        format!("mu = {}, bound = {mu_bound}", driver.mu),
    );

    let end = horizon.end();
    report.push(
        "horizon > 0",
        end > 0.0 && end.is_finite(),
        format!("horizon end = {end}"),
    );

    let margins = monotonicity_probe(driver, &probe.sample_box, probe.n_samples, probe.seed)?;
    report.push(
        "monotonicity of f in y",
        margins.f_margin <= probe.tol,
        match (&margins.f_witness, margins.f_margin > probe.tol) {
            (Some(w), true) => format!(
                "margin {:.3e} at t={}, x={:?}, y={}, y'={}",
                margins.f_margin, w.t, w.x, w.y, w.y_prime
            ),
            _ => format!("margin {:.3e}", margins.f_margin),
        },
    );
    report.push(
        "monotonicity of g in y",
        margins.g_margin <= probe.tol,
        match (&margins.g_witness, margins.g_margin > probe.tol) {
            (Some(w), true) => format!(
                "margin {:.3e} at t={}, x={:?}, y={}, y'={}",
                margins.g_margin, w.t, w.x, w.y, w.y_prime
            ),
            _ => format!("margin {:.3e}", margins.g_margin),
        },
    );

    // Growth bounds, on a stream independent of the monotonicity pairs.
    let mut rng = ChaCha8Rng::seed_from_u64(probe.seed ^ 0x9e37_79b9_7f4a_7c15);
    let zdim = probe.sample_box.x_lo.len().max(1);
    let mut f_viol = None;
    let mut g_viol = None;
    let mut terminal_states = Vec::with_capacity(probe.n_samples.min(1000));
    for i in 0..probe.n_samples {
        let t = uniform(&mut rng, probe.sample_box.t);
        let x = probe.sample_box.sample_x(&mut rng);
        let y = uniform(&mut rng, probe.sample_box.y);
        let z: Vec<f64> = (0..zdim).map(|_| uniform(&mut rng, probe.sample_box.z)).collect();
        let fv = driver.f(t, &x, y, &z);
        let gv = driver.g(t, &x, y);
        if !fv.is_finite() || !gv.is_finite() {
            return Err(Error::Evaluation {
                point: format!("t={t}, x={x:?}, y={y}, z={z:?}"),
                reason: "non-finite driver value".into(),
            });
        }
        let znorm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let fb = (driver.growth_phi)(t) + driver.k_f * (y.abs() + znorm);
        if f_viol.is_none() && fv.abs() > fb + probe.tol {
            f_viol = Some(format!("|f| = {} > {fb} at t={t}, x={x:?}, y={y}, z={z:?}", fv.abs()));
        }
        let gb = (driver.growth_psi)(t) + driver.k_f * y.abs();
        if g_viol.is_none() && gv.abs() > gb + probe.tol {
            g_viol = Some(format!("|g| = {} > {gb} at t={t}, x={x:?}, y={y}", gv.abs()));
        }
        if i < 1000 {
            terminal_states.push(x);
        }
    }
    report.push(
        "growth of f",
        f_viol.is_none(),
        f_viol.unwrap_or_else(|| "ok".into()),
    );
    report.push(
        "growth of g",
        g_viol.is_none(),
        g_viol.unwrap_or_else(|| "ok".into()),
    );

    let viol = obstacle.terminal_violation(terminal_states.iter().map(|v| v.as_slice()));
    report.push(
        "S_tau <= xi",
        viol.is_none(),
        match viol {
            Some(x) => format!("h({x:?}) = {} > xi = {}", obstacle.h(&x), obstacle.xi(&x)),
            None => "ok".into(),
        },
    );
    Ok(report)
}

/// Named numeric parameters for the built-in drivers and obstacles.
pub type Params = BTreeMap<String, f64>;

fn param(params: &Params, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

/// Manufactured solution `u*(x) = x^2` on `[0, 1]`.
pub fn manufactured_square(x: f64) -> f64 {
    x * x
}

/// Built-in drivers by name: `zero`, `linear`, `affine-decay`, `put-payoff`, `manufactured-pde`.
///
/// * `linear`: `f = c + a y + kz z_1`, `g = g0 + b y`.
/// * `affine-decay`: `f = e^{-r t} (amp + cy y + cz z_1)`, `g = -gamma y`.
/// * `put-payoff`: `f = -rate y`, `g = -gamma y` (discounting inside and on the boundary).
/// * `manufactured-pde`: with `u = x^2`, `L = (sigma^2/2) d^2 + b d`:
///   `f = -L u(x) - kappa (y - u(x))` and `g = -du/dn(x) - kappa_b (y - u(x))`.
pub fn builtin_driver(name: &str, params: &Params) -> Result<DriverSpec> {
    let d = match name {
        "zero" => DriverSpec::zero(),
        "linear" => {
            let (c, a, kz) = (param(params, "c", 0.0), param(params, "a", 0.0), param(params, "kz", 0.0));
            let (g0, b) = (param(params, "g0", 0.0), param(params, "b", -1.0));
            let k = kz.abs().max(a.abs()).max(b.abs()).max(1e-6);
            DriverSpec::new(
                name,
                Arc::new(move |_, _, y, z| c + a * y + kz * z.first().copied().unwrap_or(0.0)),
                Arc::new(move |_, _, y| g0 + b * y),
            )
            .with_constants(a, b, k)
            .with_growth(Arc::new(move |_| 1.0f64.max(c.abs())), Arc::new(move |_| 1.0f64.max(g0.abs())))
            .with_dependence(a != 0.0 || b != 0.0, kz != 0.0)
        }
        "state-only" => {
            // Polynomial in the first coordinate, independent of (y, z).
            let (f0, f1, f2) = (param(params, "f0", 0.0), param(params, "f1", 1.0), param(params, "f2", 0.0));
            let (g0, g1) = (param(params, "g0", 0.0), param(params, "g1", 1.0));
            DriverSpec::new(
                name,
                Arc::new(move |_, x, _, _| f0 + f1 * x[0] + f2 * x[0] * x[0]),
                Arc::new(move |_, x, _| g0 + g1 * x[0]),
            )
            .with_constants(0.0, 0.0, 1.0)
            .with_growth(
                {
                    let m = param(params, "xmax", 1.0).abs();
                    Arc::new(move |_| 1.0 + f0.abs() + f1.abs() * m + f2.abs() * m * m)
                },
                {
                    let m = param(params, "xmax", 1.0).abs();
                    Arc::new(move |_| 1.0 + g0.abs() + g1.abs() * m)
                },
            )
            .independent_of_solution()
        }
        "affine-decay" => {
            let (amp, r) = (param(params, "amp", 1.0), param(params, "rate", 2.0));
            let (cy, cz) = (param(params, "cy", 0.0), param(params, "cz", 0.0));
            let gamma = param(params, "gamma", 1.0);
            let k = cz.abs().max(cy.abs()).max(gamma.abs()).max(1e-6);
            DriverSpec::new(
                name,
                Arc::new(move |t, _, y, z| {
                    (-r * t).exp() * (amp + cy * y + cz * z.first().copied().unwrap_or(0.0))
                }),
                Arc::new(move |_, _, y| -gamma * y),
            )
            .with_constants(cy.max(0.0), -gamma, k)
            .with_growth(Arc::new(move |_| 1.0f64.max(amp.abs())), Arc::new(|_| 1.0))
            .with_dependence(cy != 0.0 || gamma != 0.0, cz != 0.0)
        }
        "put-payoff" => {
            let (rate, gamma) = (param(params, "rate", 0.05), param(params, "gamma", 1.0));
            let k = rate.abs().max(gamma.abs()).max(1e-6);
            DriverSpec::new(
                name,
                Arc::new(move |_, _, y, _| -rate * y),
                Arc::new(move |_, _, y| -gamma * y),
            )
            .with_constants(-rate, -gamma, k)
            .with_dependence(rate != 0.0 || gamma != 0.0, false)
        }
        "manufactured-pde" => {
            let (kappa, kappa_b) = (param(params, "kappa", 1.0), param(params, "kappa_b", 1.0));
            let (sigma, drift) = (param(params, "sigma", 1.0), param(params, "drift", 0.0));
            let (a, b) = (param(params, "a", 0.0), param(params, "b", 1.0));
            let mid = 0.5 * (a + b);
            let lu = move |x: f64| 0.5 * sigma * sigma * 2.0 + drift * 2.0 * x;
            let k = kappa.abs().max(kappa_b.abs()).max(1e-6);
            DriverSpec::new(
                name,
                Arc::new(move |_, x, y, _| -lu(x[0]) - kappa * (y - manufactured_square(x[0]))),
                Arc::new(move |_, x, y| {
                    let normal = if x[0] <= mid { 1.0 } else { -1.0 };
                    -normal * 2.0 * x[0] - kappa_b * (y - manufactured_square(x[0]))
                }),
            )
            .with_constants(-kappa, -kappa_b, k)
            .with_growth(
                Arc::new(move |_| {
                    let m = a.abs().max(b.abs());
                    1.0f64.max(lu(a).abs().max(lu(b).abs()) + kappa.abs() * m * m)
                }),
                Arc::new(move |_| {
                    let m = a.abs().max(b.abs());
                    1.0f64.max(2.0 * m + kappa_b.abs() * m * m)
                }),
            )
            .with_dependence(kappa != 0.0 || kappa_b != 0.0, false)
        }
        other => return Err(Error::Argument(format!("unknown driver '{other}'"))),
    };
    let mut d = d;
    if let Some(&l) = params.get("lambda") {
        d.lambda = l;
    }
    if let Some(&m) = params.get("mu") {
        d.mu = m;
    }
    if let Some(&a) = params.get("alpha") {
        d.alpha = a;
    }
    if let Some(&b) = params.get("beta") {
        d.beta = b;
    }
    if let Some(&k) = params.get("k_f") {
        d.k_f = k;
    }
    Ok(d)
}

/// Built-in obstacles: `sentinel`, `constant` (`level`), `put` (`strike`), `manufactured` (`x^2 - offset`).
pub fn builtin_obstacle(name: &str, params: &Params, terminal: TerminalRule) -> Result<ObstacleSpec> {
    let mut o = match name {
        "sentinel" => ObstacleSpec::constant(SENTINEL_LEVEL, terminal),
        "constant" => ObstacleSpec::constant(param(params, "level", 0.0), terminal),
        "put" => {
            let strike = param(params, "strike", 1.0);
            let mut o = ObstacleSpec::new(
                name,
                Arc::new(move |x: &[f64]| (strike - x[0]).max(0.0)),
                terminal,
            );
            o.growth_degree = 1;
            o
        }
        "manufactured" => {
            let offset = param(params, "offset", 0.0);
            let mut o = ObstacleSpec::new(
                name,
                Arc::new(move |x: &[f64]| manufactured_square(x[0]) - offset),
                terminal,
            );
            o.growth_degree = 2;
            o
        }
        other => return Err(Error::Argument(format!("unknown obstacle '{other}'"))),
    };
    if name != "put" && name != "manufactured" {
        o.name = name.into();
    }
    Ok(o)
}

/// Named first-hitting rules on the first coordinate: `at-or-above` and
/// `at-or-below` (parameters `level`, `tol`), `never`, `immediately`.
pub fn builtin_hitting(name: &str, params: &Params) -> Result<HittingRule> {
    let level = param(params, "level", 1.0);
    let tol = param(params, "tol", 1e-9);
    Ok(match name {
        "at-or-above" => HittingRule::new(format!("x >= {level}"), Arc::new(move |x: &[f64]| x[0] >= level - tol)),
        "at-or-below" => HittingRule::new(format!("x <= {level}"), Arc::new(move |x: &[f64]| x[0] <= level + tol)),
        "never" => HittingRule::never(),
        "immediately" => HittingRule::immediately(),
        other => return Err(Error::Argument(format!("unknown hitting rule '{other}'"))),
    })
}

/// Built-in terminal rules: `obstacle`, `constant` (`xi`), `manufactured` (`x^2`).
pub fn builtin_terminal(name: &str, params: &Params) -> Result<TerminalRule> {
    match name {
        "obstacle" => Ok(TerminalRule::ObstacleAtStop),
        "constant" => {
            let xi = param(params, "xi", 0.0);
            Ok(TerminalRule::Explicit(Arc::new(move |_| xi)))
        }
        "manufactured" => Ok(TerminalRule::Explicit(Arc::new(|x: &[f64]| manufactured_square(x[0])))),
        other => Err(Error::Argument(format!("unknown terminal rule '{other}'"))),
    }
}
