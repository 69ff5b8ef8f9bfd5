//! Finite lattices, discrete Snell envelopes and their Doob–Meyer
//! decomposition, optimal stopping, and the reflected equation built from
//! the envelope of the reward `F = int f dt + int g dG + S 1{k<N} + xi 1{k=N}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::drivers::{DriverSpec, ObstacleSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChildLink {
    pub id: usize,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeNode {
    pub id: usize,
    pub level: usize,
    pub state: Vec<f64>,
    #[serde(rename = "F")]
    pub reward: f64,
    /// Time increment from this node to its children.
    pub dt: f64,
    /// Local-time increment from this node to its children.
    #[serde(rename = "dG")]
    pub dg: f64,
    pub children: Vec<ChildLink>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawLattice {
    levels: usize,
    nodes: Vec<LatticeNode>,
}

/// Validated finite lattice. Node `0` is the root; every node at level `< N`
/// has children at the next level with probabilities summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLattice", into = "RawLattice")]
pub struct Lattice {
    levels: usize,
    nodes: Vec<LatticeNode>,
    by_level: Vec<Vec<usize>>,
    parents: Vec<Vec<usize>>,
    times: Vec<f64>,
}

impl TryFrom<RawLattice> for Lattice {
    type Error = Error;

    fn try_from(raw: RawLattice) -> Result<Self> {
        Lattice::new(raw.levels, raw.nodes)
    }
}

impl From<Lattice> for RawLattice {
    fn from(l: Lattice) -> Self {
        RawLattice {
            levels: l.levels,
            nodes: l.nodes,
        }
    }
}

impl Lattice {
    pub fn new(levels: usize, nodes: Vec<LatticeNode>) -> Result<Self> {
        if levels < 1 {
            return Err(Error::Structure("lattice needs at least one level".into()));
        }
        if nodes.is_empty() || nodes[0].level != 0 {
            return Err(Error::Structure("node 0 must be the root at level 0".into()));
        }
        let n = nodes.len();
        let mut by_level = vec![Vec::new(); levels + 1];
        let mut parents = vec![Vec::new(); n];
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::Structure(format!("node at position {i} has id {}", node.id)));
            }
            if node.level > levels {
                return Err(Error::Structure(format!("node {i} at level {} > {levels}", node.level)));
            }
            if node.level == 0 && i != 0 {
                return Err(Error::Structure(format!("second root {i}")));
            }
            by_level[node.level].push(i);
            if node.level == levels {
                if !node.children.is_empty() {
                    return Err(Error::Structure(format!("terminal node {i} has children")));
                }
                continue;
            }
            if node.children.is_empty() {
                return Err(Error::Structure(format!("node {i} at level {} has no children", node.level)));
            }
            if !(node.dt >= 0.0 && node.dt.is_finite() && node.dg >= 0.0 && node.dg.is_finite()) {
                return Err(Error::Structure(format!("node {i} has invalid increments")));
            }
            let mut sum = 0.0;
            for c in &node.children {
                if c.id >= n || nodes[c.id].level != node.level + 1 {
                    return Err(Error::Structure(format!("node {i} links to invalid child {}", c.id)));
                }
                if !(c.p >= 0.0 && c.p.is_finite()) {
                    return Err(Error::Measure { node: i, sum: c.p });
                }
                sum += c.p;
                parents[c.id].push(i);
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Measure { node: i, sum });
            }
        }
        if let Some(orphan) = (1..n).find(|&i| parents[i].is_empty()) {
            return Err(Error::Structure(format!("node {orphan} is unreachable")));
        }
        let mut times = vec![0.0; n];
        for level in &by_level[1..] {
            for &i in level {
                let p = parents[i][0];
                times[i] = times[p] + nodes[p].dt;
            }
        }
        Ok(Lattice {
            levels,
            nodes,
            by_level,
            parents,
            times,
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &LatticeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[LatticeNode] {
        &self.nodes
    }

    pub fn level(&self, k: usize) -> &[usize] {
        &self.by_level[k]
    }

    /// Time of a node (sum of `dt` along the path from the root).
    pub fn time(&self, id: usize) -> f64 {
        self.times[id]
    }

    pub fn is_terminal(&self, id: usize) -> bool {
        self.nodes[id].level == self.levels
    }

    /// True when every node has exactly one parent.
    pub fn is_tree(&self) -> bool {
        self.parents.iter().skip(1).all(|p| p.len() == 1)
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.parents[id].first().copied()
    }

    fn require_tree(&self, what: &str) -> Result<()> {
        if self.is_tree() {
            Ok(())
        } else {
            Err(Error::Structure(format!("{what} needs a non-recombining tree")))
        }
    }

    /// Expectation of a node function over the children of `id`.
    pub fn expect_children(&self, id: usize, values: &[f64]) -> f64 {
        self.nodes[id].children.iter().map(|c| c.p * values[c.id]).sum()
    }

    /// Root-to-terminal paths in depth-first child order, with their probabilities.
    pub fn paths(&self) -> Vec<LatticePath> {
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        self.collect_paths(0, 1.0, &mut stack, &mut out);
        out
    }

    fn collect_paths(&self, id: usize, w: f64, stack: &mut Vec<usize>, out: &mut Vec<LatticePath>) {
        if self.is_terminal(id) {
            out.push(LatticePath {
                nodes: stack.clone(),
                weight: w,
            });
            return;
        }
        for c in &self.nodes[id].children {
            stack.push(c.id);
            self.collect_paths(c.id, w * c.p, stack, out);
            stack.pop();
        }
    }

    /// Non-recombining binomial tree for `x_{k+1} = x_k * (up | down)` with
    /// reward `payoff(x)` at every node.
    pub fn binomial<P: Fn(f64) -> f64>(
        x0: f64,
        up: f64,
        down: f64,
        p_up: f64,
        levels: usize,
        dt: f64,
        payoff: P,
    ) -> Result<Self> {
        let mut nodes = vec![LatticeNode {
            id: 0,
            level: 0,
            state: vec![x0],
            reward: payoff(x0),
            dt,
            dg: 0.0,
            children: Vec::new(),
        }];
        let mut frontier = vec![0usize];
        for level in 1..=levels {
            let mut next = Vec::with_capacity(frontier.len() * 2);
            for &parent in &frontier {
                let x = nodes[parent].state[0];
                for (factor, p) in [(up, p_up), (down, 1.0 - p_up)] {
                    let id = nodes.len();
                    let xc = x * factor;
                    nodes.push(LatticeNode {
                        id,
                        level,
                        state: vec![xc],
                        reward: payoff(xc),
                        dt: if level == levels { 0.0 } else { dt },
                        dg: 0.0,
                        children: Vec::new(),
                    });
                    nodes[parent].children.push(ChildLink { id, p });
                    next.push(id);
                }
            }
            frontier = next;
        }
        Lattice::new(levels, nodes)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatticePath {
    pub nodes: Vec<usize>,
    pub weight: f64,
}

/// Parameters of the random tree generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomTreeSpec {
    pub levels: usize,
    pub min_children: usize,
    pub max_children: usize,
    /// Probability that a node carries a positive `dG`.
    pub contact_prob: f64,
}

impl RandomTreeSpec {
    pub fn new(levels: usize, max_children: usize) -> Self {
        RandomTreeSpec {
            levels,
            min_children: 1,
            max_children,
            contact_prob: 0.3,
        }
    }
}

/// Random 1-D tree with random branching, probabilities, rewards and increments.
pub fn random_tree(spec: &RandomTreeSpec, seed: u64) -> Result<Lattice> {
    if spec.min_children < 1 || spec.max_children < spec.min_children {
        return Err(Error::Argument("need 1 <= min_children <= max_children".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 1.0 / spec.levels.max(1) as f64;
    let mut nodes = vec![LatticeNode {
        id: 0,
        level: 0,
        state: vec![0.5],
        reward: rng.sample::<f64, _>(StandardNormal),
        dt,
        dg: 0.0,
        children: Vec::new(),
    }];
    let mut frontier = vec![0usize];
    for level in 1..=spec.levels {
        let mut next = Vec::new();
        for &parent in &frontier {
            let nc = rng.random_range(spec.min_children..=spec.max_children);
            let raw: Vec<f64> = (0..nc).map(|_| 0.05 + rng.random::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            let x = nodes[parent].state[0];
            for w in raw {
                let id = nodes.len();
                let terminal = level == spec.levels;
                let dg = if !terminal && rng.random::<f64>() < spec.contact_prob {
                    0.1 * rng.random::<f64>()
                } else {
                    0.0
                };
                let step: f64 = rng.sample(StandardNormal);
                nodes.push(LatticeNode {
                    id,
                    level,
                    state: vec![x + 0.2 * step],
                    reward: rng.sample::<f64, _>(StandardNormal),
                    dt: if terminal { 0.0 } else { dt },
                    dg,
                    children: Vec::new(),
                });
                nodes[parent].children.push(ChildLink { id, p: w / total });
                next.push(id);
            }
        }
        frontier = next;
    }
    Lattice::new(spec.levels, nodes)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnellResult {
    pub reward: Vec<f64>,
    pub envelope: Vec<f64>,
    /// `E[S_{k+1} | node]`; equal to the envelope at terminal nodes.
    pub continuation: Vec<f64>,
    /// `S_k - E[S_{k+1} | node] >= 0`; zero at terminal nodes.
    pub delta_k: Vec<f64>,
    /// `S = F` at the node.
    pub stop: Vec<bool>,
}

pub fn snell_envelope(lattice: &Lattice) -> Result<SnellResult> {
    let rewards: Vec<f64> = lattice.nodes.iter().map(|n| n.reward).collect();
    snell_envelope_of(lattice, &rewards)
}

/// Backward recursion `S_N = F_N`, `S_k = max(F_k, E[S_{k+1} | node])`.
pub fn snell_envelope_of(lattice: &Lattice, rewards: &[f64]) -> Result<SnellResult> {
    if rewards.len() != lattice.len() {
        return Err(Error::Structure(format!(
            "{} rewards for {} nodes",
            rewards.len(),
            lattice.len()
        )));
    }
    if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(Error::NonFinite {
            what: "reward".into(),
            step: i,
        });
    }
    let n = lattice.len();
    let mut envelope = vec![0.0; n];
    let mut continuation = vec![0.0; n];
    let mut delta_k = vec![0.0; n];
    for k in (0..=lattice.levels).rev() {
        for &i in lattice.level(k) {
            if k == lattice.levels {
                envelope[i] = rewards[i];
                continuation[i] = rewards[i];
            } else {
                let c = lattice.expect_children(i, &envelope);
                continuation[i] = c;
                envelope[i] = rewards[i].max(c);
                delta_k[i] = envelope[i] - c;
            }
        }
    }
    let stop = envelope.iter().zip(rewards).map(|(s, f)| s == f).collect();
    Ok(SnellResult {
        reward: rewards.to_vec(),
        envelope,
        continuation,
        delta_k,
        stop,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DoobMeyer {
    pub martingale: Vec<f64>,
    /// Cumulative predictable increasing part, `K_root = 0`, `K_child = K_parent + dK_parent`.
    pub k: Vec<f64>,
}

pub fn doob_meyer(result: &SnellResult, lattice: &Lattice) -> Result<DoobMeyer> {
    if result.envelope.len() != lattice.len() || result.delta_k.len() != lattice.len() {
        return Err(Error::Structure("Snell result does not match the lattice".into()));
    }
    lattice.require_tree("the Doob-Meyer increasing part")?;
    let n = lattice.len();
    let mut k = vec![0.0; n];
    for level in 1..=lattice.levels {
        for &i in lattice.level(level) {
            let p = lattice.parents[i][0];
            k[i] = k[p] + result.delta_k[p];
        }
    }
    let martingale = result.envelope.iter().zip(&k).map(|(s, k)| s + k).collect();
    Ok(DoobMeyer { martingale, k })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimalStop {
    /// Stop level per path of [`Lattice::paths`].
    pub stop_level: Vec<usize>,
    /// `E[F_theta]` under the rule.
    pub value: f64,
}

/// First level along each path where `S = F`.
pub fn optimal_stop(result: &SnellResult, lattice: &Lattice) -> Result<OptimalStop> {
    if result.stop.len() != lattice.len() {
        return Err(Error::Structure("Snell result does not match the lattice".into()));
    }
    let paths = lattice.paths();
    let mut stop_level = Vec::with_capacity(paths.len());
    let mut value = 0.0;
    for path in &paths {
        let k = path
            .nodes
            .iter()
            .position(|&i| result.stop[i])
            .unwrap_or(lattice.levels);
        value += path.weight * result.reward[path.nodes[k]];
        stop_level.push(k);
    }
    Ok(OptimalStop { stop_level, value })
}

/// Stopping set of the optimal rule: nodes where `S = F`.
pub fn optimal_stop_set(result: &SnellResult) -> Vec<bool> {
    result.stop.clone()
}

/// Number of distinct stopping times on a tree, `c(leaf) = 1`, `c(node) = 1 + prod c(child)`.
pub fn count_stopping_rules(lattice: &Lattice) -> Result<f64> {
    lattice.require_tree("stopping-rule enumeration")?;
    let mut c = vec![1.0f64; lattice.len()];
    for k in (0..lattice.levels).rev() {
        for &i in lattice.level(k) {
            c[i] = 1.0 + lattice.nodes[i].children.iter().map(|ch| c[ch.id]).product::<f64>();
        }
    }
    Ok(c[0])
}

/// Calls `visit` once per distinct stopping time, given as the node set where
/// the rule stops (terminal nodes reached are always marked). Returns the count.
pub fn for_each_stopping_rule<V: FnMut(&[bool])>(lattice: &Lattice, mut visit: V) -> Result<usize> {
    lattice.require_tree("stopping-rule enumeration")?;
    let mut mask = vec![false; lattice.len()];
    let mut count = 0usize;
    let mut then = |m: &mut Vec<bool>| {
        count += 1;
        visit(m);
    };
    rules_at(lattice, 0, &mut mask, &mut then);
    Ok(count)
}

fn rules_at(lattice: &Lattice, id: usize, mask: &mut Vec<bool>, then: &mut dyn FnMut(&mut Vec<bool>)) {
    mask[id] = true;
    then(mask);
    mask[id] = false;
    if !lattice.is_terminal(id) {
        let children: Vec<usize> = lattice.nodes[id].children.iter().map(|c| c.id).collect();
        rules_children(lattice, &children, 0, mask, then);
    }
}

fn rules_children(
    lattice: &Lattice,
    children: &[usize],
    i: usize,
    mask: &mut Vec<bool>,
    then: &mut dyn FnMut(&mut Vec<bool>),
) {
    if i == children.len() {
        then(mask);
        return;
    }
    rules_at(lattice, children[i], mask, &mut |m| {
        rules_children(lattice, children, i + 1, m, then)
    });
}

/// First index along `path` whose node is in `stop_set` (terminal if none).
pub fn first_stop(path: &LatticePath, stop_set: &[bool]) -> usize {
    path.nodes
        .iter()
        .position(|&i| stop_set[i])
        .unwrap_or(path.nodes.len() - 1)
}

/// Driver and obstacle values per node in the regime where `f` and `g` do not
/// depend on the solution.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeDrivers {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    /// Terminal value; read at terminal nodes only.
    pub xi: Vec<f64>,
    /// Obstacle; read at non-terminal nodes only.
    pub obstacle: Vec<f64>,
}

impl TreeDrivers {
    pub fn evaluate(lattice: &Lattice, driver: &DriverSpec, obstacle: &ObstacleSpec) -> Result<Self> {
        if !driver.is_frozen() {
            return Err(Error::Regime(format!(
                "driver '{}' depends on (y, z); the envelope construction needs solution-independent drivers",
                driver.name
            )));
        }
        let mut out = TreeDrivers {
            f: Vec::with_capacity(lattice.len()),
            g: Vec::with_capacity(lattice.len()),
            xi: Vec::with_capacity(lattice.len()),
            obstacle: Vec::with_capacity(lattice.len()),
        };
        for node in lattice.nodes() {
            let t = lattice.time(node.id);
            let z = vec![0.0; node.state.len()];
            out.f.push(driver.f(t, &node.state, 0.0, &z));
            out.g.push(driver.g(t, &node.state, 0.0));
            out.xi.push(obstacle.xi(&node.state));
            out.obstacle.push(obstacle.h(&node.state));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReflectedTree {
    pub y: Vec<f64>,
    /// Cumulative `K` per node.
    pub k: Vec<f64>,
    pub delta_k: Vec<f64>,
    /// `sum_{j<k} (f_j dt_j + g_j dG_j)` along the path.
    pub running: Vec<f64>,
    pub snell: SnellResult,
}

/// `Y_k = S_k(F) - sum_{j<k}(f_j dt_j + g_j dG_j)` with `K` from the Doob–Meyer part of `S(F)`.
pub fn reflected_from_snell(lattice: &Lattice, data: &TreeDrivers) -> Result<ReflectedTree> {
    lattice.require_tree("the reflected envelope construction")?;
    let n = lattice.len();
    for (name, v) in [("f", &data.f), ("g", &data.g), ("xi", &data.xi), ("obstacle", &data.obstacle)] {
        if v.len() != n {
            return Err(Error::Structure(format!("{} {name} values for {n} nodes", v.len())));
        }
    }
    let mut running = vec![0.0; n];
    for level in 1..=lattice.levels {
        for &i in lattice.level(level) {
            let p = lattice.parents[i][0];
            let node = &lattice.nodes[p];
            running[i] = running[p] + data.f[p] * node.dt + data.g[p] * node.dg;
        }
    }
    let rewards: Vec<f64> = (0..n)
        .map(|i| {
            running[i]
                + if lattice.is_terminal(i) {
                    data.xi[i]
                } else {
                    data.obstacle[i]
                }
        })
        .collect();
    let snell = snell_envelope_of(lattice, &rewards)?;
    let dm = doob_meyer(&snell, lattice)?;
    // Where F is attained the difference is exactly xi or the obstacle; use those
    // values directly rather than the rounded difference.
    let y = (0..n)
        .map(|i| {
            if lattice.is_terminal(i) {
                data.xi[i]
            } else if snell.stop[i] {
                data.obstacle[i]
            } else {
                snell.envelope[i] - running[i]
            }
        })
        .collect();
    Ok(ReflectedTree {
        y,
        k: dm.k,
        delta_k: snell.delta_k.clone(),
        running,
        snell,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn node(id: usize, level: usize, reward: f64, children: Vec<(usize, f64)>) -> LatticeNode {
        LatticeNode {
            id,
            level,
            state: vec![id as f64],
            reward,
            dt: 0.5,
            dg: 0.0,
            children: children.into_iter().map(|(id, p)| ChildLink { id, p }).collect(),
        }
    }

    fn one_step(f0: f64) -> Lattice {
        Lattice::new(
            1,
            vec![
                node(0, 0, f0, vec![(1, 0.5), (2, 0.5)]),
                node(1, 1, 0.0, vec![]),
                node(2, 1, 3.0, vec![]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn one_step_examples() {
        assert_eq!(snell_envelope(&one_step(1.0)).unwrap().envelope[0], 1.5);
        let r = snell_envelope(&one_step(2.0)).unwrap();
        assert_eq!(r.envelope[0], 2.0);
        assert_eq!(r.delta_k[0], 0.5);
        let dm = doob_meyer(&r, &one_step(2.0)).unwrap();
        assert_eq!(dm.k, vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn optimal_stop_examples() {
        let l = one_step(2.0);
        let s = optimal_stop(&snell_envelope(&l).unwrap(), &l).unwrap();
        assert_eq!(s.stop_level, vec![0, 0]);
        let l = one_step(1.0);
        let s = optimal_stop(&snell_envelope(&l).unwrap(), &l).unwrap();
        assert_eq!(s.stop_level, vec![1, 1]);
        assert_eq!(s.value, 1.5);
    }

    #[test]
    fn measure_error() {
        let e = Lattice::new(
            1,
            vec![
                node(0, 0, 0.0, vec![(1, 0.5), (2, 0.4)]),
                node(1, 1, 0.0, vec![]),
                node(2, 1, 0.0, vec![]),
            ],
        );
        assert!(matches!(e, Err(Error::Measure { node: 0, .. })));
    }

    #[test]
    fn json_roundtrip_uses_documented_keys() {
        let l = one_step(1.0);
        let s = l.to_json().unwrap();
        assert!(s.contains("\"F\"") && s.contains("\"dG\"") && s.contains("\"levels\""));
        assert_eq!(Lattice::from_json(&s).unwrap(), l);
        let broken = s.replace("0.5", "0.6");
        assert!(Lattice::from_json(&broken).is_err());
    }

    #[test]
    fn constant_reward_has_no_push() {
        let mut l = random_tree(&RandomTreeSpec::new(4, 3), 3).unwrap();
        let rewards = vec![2.0; l.len()];
        let r = snell_envelope_of(&l, &rewards).unwrap();
        assert!(r.delta_k.iter().all(|&d| d == 0.0));
        let dm = doob_meyer(&r, &l).unwrap();
        assert!(dm.martingale.iter().all(|&m| m == 2.0));
        l.nodes[0].reward = f64::NAN;
        assert!(matches!(snell_envelope(&l), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn enumeration_counts() {
        let l = Lattice::binomial(1.0, 1.1, 0.9, 0.5, 3, 1.0, |x| x).unwrap();
        assert_eq!(count_stopping_rules(&l).unwrap(), 26.0);
        let n = for_each_stopping_rule(&l, |_| {}).unwrap();
        assert_eq!(n, 26);
    }

    #[test]
    fn exhaustive_rules_never_beat_the_envelope() {
        for seed in 0..10 {
            let l = random_tree(&RandomTreeSpec::new(4, 2), seed).unwrap();
            let r = snell_envelope(&l).unwrap();
            let paths = l.paths();
            let opt = optimal_stop(&r, &l).unwrap();
            assert!((opt.value - r.envelope[0]).abs() < 1e-12);
            let mut best = f64::NEG_INFINITY;
            for_each_stopping_rule(&l, |set| {
                let v: f64 = paths
                    .iter()
                    .map(|p| p.weight * l.node(p.nodes[first_stop(p, set)]).reward)
                    .sum();
                assert!(v <= r.envelope[0] + 1e-12);
                best = best.max(v);
            })
            .unwrap();
            assert!((best - r.envelope[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn reflected_examples() {
        let l = Lattice::binomial(1.0, 1.1, 0.9, 0.5, 2, 0.5, |_| 0.0).unwrap();
        let n = l.len();
        let data = TreeDrivers {
            f: vec![1.0; n],
            g: vec![0.0; n],
            xi: vec![0.0; n],
            obstacle: vec![-10.0; n],
        };
        let r = reflected_from_snell(&l, &data).unwrap();
        assert!((r.y[0] - 1.0).abs() < 1e-15);
        assert!(r.k.iter().all(|&k| k == 0.0));

        let data = TreeDrivers {
            f: vec![0.0; n],
            g: vec![0.0; n],
            xi: vec![0.0; n],
            obstacle: vec![5.0; n],
        };
        let r = reflected_from_snell(&l, &data).unwrap();
        for i in 0..n {
            if l.is_terminal(i) {
                assert_eq!(r.y[i], 0.0);
                assert_eq!(r.k[i], 5.0);
            } else {
                assert_eq!(r.y[i], 5.0);
            }
        }
        for &i in l.level(1) {
            assert_eq!(r.delta_k[i], 5.0);
        }
        assert_eq!(r.delta_k[0], 0.0);
    }

    #[test]
    fn inactive_boundary_driver() {
        let l = random_tree(
            &RandomTreeSpec {
                contact_prob: 0.0,
                ..RandomTreeSpec::new(3, 2)
            },
            9,
        )
        .unwrap();
        let n = l.len();
        let xi: Vec<f64> = (0..n).map(|i| l.node(i).reward).collect();
        let base = TreeDrivers {
            f: vec![0.0; n],
            g: vec![0.0; n],
            xi: xi.clone(),
            obstacle: vec![0.1; n],
        };
        let with_g = TreeDrivers {
            g: vec![1.0; n],
            ..base.clone()
        };
        let a = reflected_from_snell(&l, &base).unwrap();
        let b = reflected_from_snell(&l, &with_g).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.k, b.k);
    }

    #[test]
    fn regime_error_for_solution_dependent_driver() {
        let l = one_step(1.0);
        let d = crate::drivers::builtin_driver("put-payoff", &Default::default()).unwrap();
        let o = ObstacleSpec::sentinel(0.0);
        assert!(matches!(TreeDrivers::evaluate(&l, &d, &o), Err(Error::Regime(_))));
    }

    fn check_tree_invariants(l: &Lattice, r: &ReflectedTree, data: &TreeDrivers) {
        let s = &r.snell;
        for i in 0..l.len() {
            assert!(s.envelope[i] >= s.reward[i]);
            assert!(s.delta_k[i] >= 0.0);
            if s.delta_k[i] > 0.0 {
                assert_eq!(s.envelope[i], s.reward[i]);
            }
            if l.is_terminal(i) {
                assert_eq!(r.y[i], data.xi[i]);
            } else {
                assert!(r.y[i] >= data.obstacle[i] - 1e-12);
                assert!((s.envelope[i] - s.continuation[i] - s.delta_k[i]).abs() < 1e-12);
                // Y_k = E[Y_{k+1}] + f dt + g dG + dK
                let node = l.node(i);
                let ey = l.expect_children(i, &r.y);
                let rhs = ey + data.f[i] * node.dt + data.g[i] * node.dg + r.delta_k[i];
                assert!((r.y[i] - rhs).abs() < 1e-12, "node {i}: {} vs {rhs}", r.y[i]);
            }
        }
        let dm = doob_meyer(s, l).unwrap();
        for i in 0..l.len() {
            if !l.is_terminal(i) {
                assert!((l.expect_children(i, &dm.martingale) - dm.martingale[i]).abs() < 1e-12);
            }
        }
        for p in l.paths() {
            let sum: f64 = p
                .nodes
                .iter()
                .map(|&i| (s.envelope[i] - s.reward[i]) * s.delta_k[i])
                .sum();
            assert_eq!(sum, 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn random_tree_invariants(seed in 0u64..10_000, levels in 1usize..=6, kids in 1usize..=3) {
            let kids = if levels > 4 { kids.min(2) } else { kids };
            let l = random_tree(&RandomTreeSpec::new(levels, kids), seed).unwrap();
            let n = l.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = TreeDrivers {
                f: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
                g: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
                xi: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
                obstacle: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
            };
            let r = reflected_from_snell(&l, &data).unwrap();
            check_tree_invariants(&l, &r, &data);
        }

        #[test]
        fn envelope_is_minimal(seed in 0u64..10_000, bump in 0.0f64..1.0) {
            // Any supermartingale above F built by backward recursion with a
            // nonnegative perturbation dominates S(F).
            let l = random_tree(&RandomTreeSpec::new(5, 2), seed).unwrap();
            let r = snell_envelope(&l).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
            let mut u = vec![0.0; l.len()];
            for k in (0..=l.levels()).rev() {
                for &i in l.level(k) {
                    let extra = bump * rng.random::<f64>();
                    u[i] = if k == l.levels() {
                        l.node(i).reward + extra
                    } else {
                        l.node(i).reward.max(l.expect_children(i, &u)) + extra
                    };
                }
            }
            for i in 0..l.len() {
                prop_assert!(u[i] >= r.envelope[i]);
            }
        }
    }
}
