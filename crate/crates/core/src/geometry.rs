//! Bounded domains `{phi > 0}` with closed-form distance, normal and projection.
//!
//! Only intervals and balls are supported. For both, `phi` is the exact signed
//! distance to the boundary (negative outside the closure), so `|grad phi| = 1`
//! everywhere except the cut locus (interval midpoint, ball center).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Interval { a: f64, b: f64 },
    Ball { center: Vec<f64>, radius: f64 },
}

impl Domain {
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::Domain(format!("interval needs a < b, got [{a}, {b}]")));
        }
        Ok(Domain::Interval { a, b })
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::Domain("ball center must have dimension >= 1".into()));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::Domain(format!("ball radius must be positive, got {radius}")));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("ball center must be finite".into()));
        }
        Ok(Domain::Ball { center, radius })
    }

    /// Checks the invariants of a value that may have been deserialized.
    pub fn validated(self) -> Result<Self> {
        match self {
            Domain::Interval { a, b } => Domain::interval(a, b),
            Domain::Ball { center, radius } => Domain::ball(center, radius),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Ball { center, .. } => center.len(),
        }
    }

    /// Half-width of the boundary band on which `|grad phi| = 1` is guaranteed.
    pub fn band(&self) -> f64 {
        match self {
            Domain::Interval { a, b } => 0.5 * (b - a),
            Domain::Ball { radius, .. } => 0.5 * radius,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Signed distance to the boundary; positive inside, zero on the boundary.
    pub fn phi(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.phi_unchecked(x))
    }

    pub(crate) fn phi_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            Domain::Interval { a, b } => (x[0] - a).min(b - x[0]),
            Domain::Ball { center, radius } => radius - dist(x, center),
        }
    }

    pub fn contains_closure(&self, x: &[f64]) -> Result<bool> {
        Ok(self.phi(x)? >= 0.0)
    }

    /// `grad phi(x)`, the unit normal pointing into the domain.
    pub fn inward_normal(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        match self {
            Domain::Interval { a, b } => {
                let mid = 0.5 * (a + b);
                if x[0] < mid {
                    Ok(vec![1.0])
                } else if x[0] > mid {
                    Ok(vec![-1.0])
                } else {
                    Err(Error::DegeneratePoint { point: x.to_vec() })
                }
            }
            Domain::Ball { center, radius } => {
                let r = dist(x, center);
                if r <= 1e-14 * radius.max(1.0) {
                    return Err(Error::DegeneratePoint { point: x.to_vec() });
                }
                Ok(center.iter().zip(x).map(|(c, xi)| (c - xi) / r).collect())
            }
        }
    }

    /// Nearest point of the closure and the Euclidean distance moved.
    pub fn project_to_closure(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_dim(x)?;
        let mut out = x.to_vec();
        let d = self.project_in_place(&mut out);
        Ok((out, d))
    }

    /// Projects `x` onto the closure in place, returning the distance moved.
    pub(crate) fn project_in_place(&self, x: &mut [f64]) -> f64 {
        match self {
            Domain::Interval { a, b } => {
                if x[0] < *a {
                    let d = a - x[0];
                    x[0] = *a;
                    d
                } else if x[0] > *b {
                    let d = x[0] - b;
                    x[0] = *b;
                    d
                } else {
                    0.0
                }
            }
            Domain::Ball { center, radius } => {
                let r = dist(x, center);
                if r <= *radius {
                    return 0.0;
                }
                let orig: Vec<f64> = x.to_vec();
                let mut scale = radius / r;
                // Rounding can leave the scaled point a few ulps outside; shrink until it is not.
                loop {
                    for ((xi, o), c) in x.iter_mut().zip(&orig).zip(center) {
                        *xi = c + (o - c) * scale;
                    }
                    if dist(x, center) <= *radius {
                        break;
                    }
                    scale *= 1.0 - f64::EPSILON;
                }
                r - radius
            }
        }
    }

    /// Nearest point on the boundary itself (used to evaluate boundary data).
    pub fn nearest_boundary_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        match self {
            Domain::Interval { a, b } => {
                let mid = 0.5 * (a + b);
                Ok(vec![if x[0] <= mid { *a } else { *b }])
            }
            Domain::Ball { center, radius } => {
                let r = dist(x, center);
                if r <= 1e-14 * radius.max(1.0) {
                    return Err(Error::DegeneratePoint { point: x.to_vec() });
                }
                Ok(center
                    .iter()
                    .zip(x)
                    .map(|(c, xi)| c + (xi - c) * radius / r)
                    .collect())
            }
        }
    }
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_interval() -> Domain {
        Domain::interval(0.0, 1.0).unwrap()
    }

    fn unit_disc() -> Domain {
        Domain::ball(vec![0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn phi_examples() {
        assert!((unit_interval().phi(&[0.3]).unwrap() - 0.3).abs() < 1e-15);
        assert!(unit_disc().phi(&[0.6, 0.8]).unwrap().abs() < 1e-15);
        assert!((unit_interval().phi(&[1.3]).unwrap() + 0.3).abs() < 1e-15);
    }

    #[test]
    fn phi_rejects_wrong_dimension() {
        assert_eq!(
            unit_disc().phi(&[0.1]),
            Err(Error::Dimension { expected: 2, got: 1 })
        );
    }

    #[test]
    fn normal_examples() {
        assert_eq!(unit_interval().inward_normal(&[0.0]).unwrap(), vec![1.0]);
        assert_eq!(unit_interval().inward_normal(&[1.0]).unwrap(), vec![-1.0]);
        let n = unit_disc().inward_normal(&[0.6, 0.8]).unwrap();
        assert!((n[0] + 0.6).abs() < 1e-15 && (n[1] + 0.8).abs() < 1e-15);
    }

    #[test]
    fn normal_degenerate_points() {
        assert!(matches!(
            unit_interval().inward_normal(&[0.5]),
            Err(Error::DegeneratePoint { .. })
        ));
        assert!(matches!(
            unit_disc().inward_normal(&[0.0, 0.0]),
            Err(Error::DegeneratePoint { .. })
        ));
    }

    #[test]
    fn projection_examples() {
        let (p, d) = unit_interval().project_to_closure(&[1.3]).unwrap();
        assert_eq!(p, vec![1.0]);
        assert!((d - 0.3).abs() < 1e-15);
        let (p, d) = unit_disc().project_to_closure(&[2.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
        assert_eq!(d, 1.0);
        let (p, d) = unit_interval().project_to_closure(&[0.5]).unwrap();
        assert_eq!(p, vec![0.5]);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn invalid_domains() {
        assert!(Domain::interval(1.0, 1.0).is_err());
        assert!(Domain::ball(vec![0.0], 0.0).is_err());
        assert!(Domain::ball(vec![], 1.0).is_err());
    }

    fn finite_diff_gradient(dom: &Domain, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (dom.phi(&xp).unwrap() - dom.phi(&xm).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn projection_lands_in_closure_and_is_idempotent(
            x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0
        ) {
            let doms = [
                (unit_interval(), vec![x]),
                (unit_disc(), vec![x, y]),
                (Domain::ball(vec![0.5, -0.2, 1.0], 0.7).unwrap(), vec![x, y, z]),
            ];
            for (dom, p) in doms {
                let (q, d) = dom.project_to_closure(&p).unwrap();
                prop_assert!(dom.phi(&q).unwrap() >= -1e-12);
                prop_assert!(d >= 0.0);
                prop_assert_eq!(d == 0.0, dom.phi(&p).unwrap() >= 0.0);
                let (q2, d2) = dom.project_to_closure(&q).unwrap();
                prop_assert_eq!(d2, 0.0);
                prop_assert_eq!(q2, q);
            }
        }

        #[test]
        fn displacement_matches_normal_at_projected_point(
            x in -3.0f64..3.0, y in -3.0f64..3.0
        ) {
            for (dom, p) in [(unit_interval(), vec![x]), (unit_disc(), vec![x, y])] {
                let (q, d) = dom.project_to_closure(&p).unwrap();
                if d > 1e-9 {
                    let n = dom.inward_normal(&q).unwrap();
                    for i in 0..p.len() {
                        prop_assert!(((q[i] - p[i]) / d - n[i]).abs() < 1e-12);
                    }
                }
            }
        }

        #[test]
        fn normal_matches_finite_difference_in_band(
            s in 0.01f64..0.45, theta in 0.0f64..std::f64::consts::TAU, left in any::<bool>()
        ) {
            let dom = unit_interval();
            let x = if left { vec![s] } else { vec![1.0 - s] };
            let fd = finite_diff_gradient(&dom, &x);
            prop_assert!((fd[0] - dom.inward_normal(&x).unwrap()[0]).abs() < 1e-6);

            let disc = unit_disc();
            let r = 1.0 - s;
            let p = vec![r * theta.cos(), r * theta.sin()];
            let fd = finite_diff_gradient(&disc, &p);
            let n = disc.inward_normal(&p).unwrap();
            let norm = (fd[0] * fd[0] + fd[1] * fd[1]).sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-6);
            prop_assert!((fd[0] - n[0]).abs() < 1e-6 && (fd[1] - n[1]).abs() < 1e-6);
        }
    }
}
