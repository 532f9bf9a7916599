//! Lumen and outer wall segmentation on straightened vessel sections.

mod inner;
mod mrf;
mod outer;
mod rbf;

pub use inner::{lumen_unary_costs, segment_inner_wall, InnerParams, InnerResult};
pub use mrf::{solve_cyclic_mrf, MrfProblem, DEFAULT_LAMBDA};
pub use outer::{raw_outer_radii, segment_outer_wall, OuterParams, RawOuter, DEFAULT_THRESHOLD};
pub use rbf::{apply_rbf_correction, enforce_order, wendland_c2, EditConstraint};

use std::f64::consts::TAU;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::centerline::Centerline;
use crate::error::{Error, Result};
use crate::geom;
use crate::reformat::CrossSection;

/// Ray-cast samples of one cross-section.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarSampling {
    pub n_rays: usize,
    pub n_radii: usize,
    pub dr: f64,
    /// Ray-major samples: `samples[i * n_radii + j]` at angle `2πi/n_rays`, radius `j·dr`.
    pub samples: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarParams {
    pub n_rays: usize,
    pub n_radii: usize,
    pub dr: f64,
}

impl Default for PolarParams {
    fn default() -> Self {
        Self {
            n_rays: 72,
            n_radii: 100,
            dr: 0.1,
        }
    }
}

impl PolarParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_rays < 8 {
            return Err(Error::Parameter(format!("n_rays {} must be at least 8", self.n_rays)));
        }
        if self.n_radii < 3 {
            return Err(Error::Parameter(format!("n_radii {} must be at least 3", self.n_radii)));
        }
        if !(self.dr > 0.0 && self.dr.is_finite()) {
            return Err(Error::Parameter(format!("dr {} must be positive", self.dr)));
        }
        Ok(())
    }

    pub fn max_radius(&self) -> f64 {
        (self.n_radii - 1) as f64 * self.dr
    }

    pub fn angle(&self, ray: usize) -> f64 {
        TAU * ray as f64 / self.n_rays as f64
    }
}

impl PolarSampling {
    pub fn from_section(section: &CrossSection, params: &PolarParams) -> Result<Self> {
        params.validate()?;
        let mut samples = Vec::with_capacity(params.n_rays * params.n_radii);
        for i in 0..params.n_rays {
            let (sn, cs) = params.angle(i).sin_cos();
            let mut last = section.sample(0.0, 0.0);
            for j in 0..params.n_radii {
                let r = j as f64 * params.dr;
                // past the volume border the ray holds its last valid value
                if let Some(v) = section.sample_valid(r * cs, r * sn) {
                    last = v;
                }
                samples.push(last);
            }
        }
        Ok(Self {
            n_rays: params.n_rays,
            n_radii: params.n_radii,
            dr: params.dr,
            samples,
        })
    }

    pub fn ray(&self, i: usize) -> &[f64] {
        &self.samples[i * self.n_radii..(i + 1) * self.n_radii]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WallKind {
    Inner,
    Outer,
}

/// Radius field `r(s, θ)` sampled at section arclengths and equally spaced angles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallSurface {
    pub kind: WallKind,
    pub step_s: f64,
    pub angles_n: usize,
    /// `radii[section][ray]` in mm.
    pub radii: Vec<Vec<f64>>,
    pub section_s: Vec<f64>,
}

impl WallSurface {
    pub fn n_sections(&self) -> usize {
        self.radii.len()
    }

    pub fn angle(&self, ray: usize) -> f64 {
        TAU * ray as f64 / self.angles_n as f64
    }

    /// Arclength range covered by the surface.
    pub fn s_range(&self) -> (f64, f64) {
        (self.section_s[0], *self.section_s.last().unwrap())
    }

    /// Index of the section closest to `s`.
    pub fn nearest_section(&self, s: f64) -> usize {
        let i = self.section_s.partition_point(|x| *x < s);
        if i == 0 {
            0
        } else if i >= self.section_s.len() {
            self.section_s.len() - 1
        } else if (s - self.section_s[i - 1]) <= (self.section_s[i] - s) {
            i - 1
        } else {
            i
        }
    }

    /// Radius of section `k` at angle `theta`, linear between neighbouring rays.
    pub fn radius_at(&self, k: usize, theta: f64) -> f64 {
        let n = self.angles_n;
        let u = theta.rem_euclid(TAU) / TAU * n as f64;
        let i0 = (u.floor() as usize) % n;
        let i1 = (i0 + 1) % n;
        let f = u - u.floor();
        let r = &self.radii[k];
        r[i0] * (1.0 - f) + r[i1] * f
    }

    /// Area of the polygon spanned by the radii of section `k`.
    pub fn section_area(&self, k: usize) -> f64 {
        let r = &self.radii[k];
        let n = r.len();
        let s = (TAU / n as f64).sin();
        0.5 * s * (0..n).map(|i| r[i] * r[(i + 1) % n]).sum::<f64>()
    }

    pub fn mean_radius(&self) -> f64 {
        let n: usize = self.radii.iter().map(|r| r.len()).sum();
        self.radii.iter().flatten().sum::<f64>() / n as f64
    }

    /// Triangulated tube mesh in world coordinates, as Wavefront OBJ text.
    pub fn to_obj(&self, centerline: &Centerline) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {:?} wall, {} sections x {} rays", self.kind, self.n_sections(), self.angles_n);
        for (k, s) in self.section_s.iter().enumerate() {
            let f = centerline.frame_at(*s);
            let c = centerline.point_at(*s);
            for i in 0..self.angles_n {
                let (sn, cs) = self.angle(i).sin_cos();
                let r = self.radii[k][i];
                let p = geom::axpy(geom::axpy(c, r * cs, f.normal), r * sn, f.binormal);
                let _ = writeln!(out, "v {:.4} {:.4} {:.4}", p[0], p[1], p[2]);
            }
        }
        let n = self.angles_n;
        for k in 0..self.n_sections().saturating_sub(1) {
            for i in 0..n {
                let a = k * n + i + 1;
                let b = k * n + (i + 1) % n + 1;
                let c = (k + 1) * n + i + 1;
                let d = (k + 1) * n + (i + 1) % n + 1;
                let _ = writeln!(out, "f {a} {b} {d}");
                let _ = writeln!(out, "f {a} {d} {c}");
            }
        }
        out
    }

    pub(crate) fn check_shape(&self) -> Result<()> {
        if self.radii.is_empty() || self.radii.len() != self.section_s.len() {
            return Err(Error::Parameter("surface sections and radii disagree".into()));
        }
        if self.radii.iter().any(|r| r.len() != self.angles_n) {
            return Err(Error::Parameter("surface rows must have angles_n radii".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(r: f64) -> WallSurface {
        WallSurface {
            kind: WallKind::Inner,
            step_s: 0.5,
            angles_n: 72,
            radii: vec![vec![r; 72]; 3],
            section_s: vec![0.0, 0.5, 1.0],
        }
    }

    #[test]
    fn polygon_area_approaches_disk() {
        let w = circle(2.0);
        let disk = std::f64::consts::PI * 4.0;
        assert!((w.section_area(1) - disk).abs() / disk < 0.002);
    }

    #[test]
    fn radius_interpolates_cyclically() {
        let mut w = circle(1.0);
        w.radii[0][71] = 3.0;
        let half_step = w.angle(1) / 2.0;
        assert!((w.radius_at(0, TAU - half_step) - 2.0).abs() < 1e-9);
        assert!((w.radius_at(0, -half_step) - 2.0).abs() < 1e-9);
        assert_eq!(w.nearest_section(0.7), 1);
        assert_eq!(w.nearest_section(0.8), 2);
        assert_eq!(w.nearest_section(-4.0), 0);
    }

    #[test]
    fn json_layout() {
        let v = serde_json::to_value(circle(1.0)).unwrap();
        assert_eq!(v["kind"], "inner");
        assert_eq!(v["angles_n"], 72);
        assert_eq!(v["radii"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn obj_has_one_vertex_per_sample() {
        let cl = Centerline::new("c", vec![[0.0; 3], [0.0, 0.0, 1.0]], None).unwrap();
        let obj = circle(1.0).to_obj(&cl);
        assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), 216);
        assert_eq!(obj.lines().filter(|l| l.starts_with("f ")).count(), 2 * 2 * 72);
    }
}
