//! Local surface edits with compactly supported radial basis functions.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{WallKind, WallSurface};
use crate::error::{Error, Result};

/// Smallest radius an edit may leave behind (mm).
const MIN_RADIUS: f64 = 0.01;

fn default_sigma_s() -> f64 {
    2.0
}

fn default_sigma_theta() -> f64 {
    30f64.to_radians()
}

/// A user-dragged boundary point: the surface must pass through `target` at `(s, theta)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditConstraint {
    pub s: f64,
    /// Angle in radians, measured from the section's first in-plane axis.
    pub theta: f64,
    pub target: f64,
    /// Support along the centerline (mm).
    #[serde(default = "default_sigma_s")]
    pub sigma_s: f64,
    /// Angular support (radians).
    #[serde(default = "default_sigma_theta")]
    pub sigma_theta: f64,
}

impl EditConstraint {
    pub fn new(s: f64, theta: f64, target: f64) -> Self {
        Self {
            s,
            theta,
            target,
            sigma_s: default_sigma_s(),
            sigma_theta: default_sigma_theta(),
        }
    }

    fn distance(&self, s: f64, theta: f64) -> f64 {
        let mut dt = (theta - self.theta).rem_euclid(TAU);
        if dt > PI {
            dt = TAU - dt;
        }
        let a = (s - self.s) / self.sigma_s;
        let b = dt / self.sigma_theta;
        (a * a + b * b).sqrt()
    }
}

/// Wendland C² kernel `(1 - d)^4 (4d + 1)` on `[0, 1)`, zero beyond.
pub fn wendland_c2(d: f64) -> f64 {
    if d >= 1.0 {
        0.0
    } else {
        let u = 1.0 - d;
        u * u * u * u * (4.0 * d + 1.0)
    }
}

/// Apply interactive corrections to a surface.
///
/// Constraints snap to the nearest surface node; the correction field
/// `Δr = Σ w_j φ(d_j)` interpolates every target exactly and is zero outside
/// the union of supports.
pub fn apply_rbf_correction(w: &WallSurface, constraints: &[EditConstraint]) -> Result<WallSurface> {
    w.check_shape()?;
    if constraints.is_empty() {
        return Err(Error::Parameter("at least one constraint is required".into()));
    }
    let (s0, s1) = w.s_range();
    let n = w.angles_n;
    let dtheta = TAU / n as f64;
    // node -> (constraint with node coordinates, target)
    let mut nodes: BTreeMap<(usize, usize), EditConstraint> = BTreeMap::new();
    for c in constraints {
        if !(c.target > 0.0 && c.target.is_finite()) {
            return Err(Error::Parameter(format!("target radius {} must be positive", c.target)));
        }
        if !(c.sigma_s > 0.0 && c.sigma_theta > 0.0) {
            return Err(Error::Parameter("constraint support must be positive".into()));
        }
        if !(c.s >= s0 - 1e-9 && c.s <= s1 + 1e-9) || !c.theta.is_finite() {
            return Err(Error::Parameter(format!(
                "constraint at s = {} outside the surface range [{s0}, {s1}]",
                c.s
            )));
        }
        let k = w.nearest_section(c.s);
        let i = ((c.theta.rem_euclid(TAU) / dtheta).round() as usize) % n;
        let snapped = EditConstraint {
            s: w.section_s[k],
            theta: w.angle(i),
            ..c.clone()
        };
        match nodes.get(&(k, i)) {
            Some(prev) if prev.target != c.target => {
                return Err(Error::ConflictingConstraints(format!(
                    "targets {} and {} at the same point (s = {}, θ = {:.4})",
                    prev.target, c.target, snapped.s, snapped.theta
                )));
            }
            Some(_) => {}
            None => {
                nodes.insert((k, i), snapped);
            }
        }
    }
    let cs: Vec<((usize, usize), EditConstraint)> = nodes.into_iter().collect();
    let m = cs.len();
    let a = DMatrix::from_fn(m, m, |r, c| {
        let node = &cs[r].1;
        wendland_c2(cs[c].1.distance(node.s, node.theta))
    });
    let rhs = DVector::from_iterator(m, cs.iter().map(|((k, i), c)| c.target - w.radii[*k][*i]));
    let weights = a
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::ConflictingConstraints("interpolation system is singular".into()))?;
    let residual = (&a * &weights - &rhs).amax();
    if !(residual <= 1e-6) {
        return Err(Error::ConflictingConstraints(format!(
            "interpolation residual {residual:.3e} mm"
        )));
    }
    let mut out = w.clone();
    for (k, row) in out.radii.iter_mut().enumerate() {
        let s = w.section_s[k];
        if cs.iter().all(|(_, c)| ((s - c.s) / c.sigma_s).abs() >= 1.0) {
            continue;
        }
        for (i, r) in row.iter_mut().enumerate() {
            let theta = w.angle(i);
            let mut delta = 0.0;
            let mut touched = false;
            for (j, (_, c)) in cs.iter().enumerate() {
                let d = c.distance(s, theta);
                if d < 1.0 {
                    delta += weights[j] * wendland_c2(d);
                    touched = true;
                }
            }
            if touched {
                *r = (*r + delta).max(MIN_RADIUS);
            }
        }
    }
    Ok(out)
}

/// Restore `inner ≤ outer` after `edited` changed, moving only the partner surface.
pub fn enforce_order(edited: &WallSurface, partner: &WallSurface) -> WallSurface {
    let mut out = partner.clone();
    for (prow, erow) in out.radii.iter_mut().zip(&edited.radii) {
        for (p, e) in prow.iter_mut().zip(erow) {
            *p = match edited.kind {
                WallKind::Inner => p.max(*e),
                WallKind::Outer => p.min(*e),
            };
        }
    }
    out
}
