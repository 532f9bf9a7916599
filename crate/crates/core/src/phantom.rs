//! Analytic digital phantoms with partial-volume voxelization.
//!
//! Every phantom is a tube around an analytic axis (a line segment or a circular
//! arc) made of concentric layers: lumen, wall ring, optional fat collar, and
//! background. Boundary voxels are supersampled 3×3×3 so their values are the
//! occupancy-weighted mixture of the materials they straddle.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::volume::Volume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    StraightTube,
    CurvedTube,
    StenosedTube,
    PlaqueTube,
    DePair,
    FatCollarTube,
}

/// An angular sector of the wall ring with its own attenuation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaqueComponent {
    pub name: String,
    pub hu: f64,
    /// Attenuation in the high-kV scan (dual-energy phantoms only).
    #[serde(default)]
    pub hu_high: Option<f64>,
    pub theta_start_deg: f64,
    pub theta_end_deg: f64,
}

/// A solid ball, used as an asymmetric landmark (registration) or a blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
    pub hu: f64,
    #[serde(default)]
    pub hu_high: Option<f64>,
}

fn default_dims() -> [usize; 3] {
    [96, 96, 96]
}
fn default_spacing() -> Vec3 {
    [0.4, 0.4, 0.4]
}
fn default_lumen_radius() -> f64 {
    2.0
}
fn default_lumen_hu() -> f64 {
    350.0
}
fn default_wall_hu() -> f64 {
    60.0
}
fn default_fat_hu() -> f64 {
    -100.0
}
fn default_background_hu() -> f64 {
    -50.0
}
fn default_axis() -> Vec3 {
    [0.0, 0.0, 1.0]
}
fn default_stenosis_length() -> f64 {
    8.0
}
fn default_major_radius() -> f64 {
    35.0
}

/// Parameters of a phantom. Fields not used by a kind are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    #[serde(default = "default_dims")]
    pub dims: [usize; 3],
    #[serde(default = "default_spacing")]
    pub spacing: Vec3,
    #[serde(default)]
    pub origin: Vec3,
    /// Point on the axis (straight kinds) or arc center (curved). Defaults to the
    /// volume center, or for the curved tube to a corner region that fits the arc.
    #[serde(default)]
    pub center: Option<Vec3>,
    /// Axis direction (straight kinds) or arc-plane normal (curved).
    #[serde(default = "default_axis")]
    pub axis: Vec3,
    #[serde(default = "default_lumen_radius")]
    pub lumen_radius: f64,
    #[serde(default)]
    pub outer_radius: Option<f64>,
    #[serde(default)]
    pub fat_radius: Option<f64>,
    /// Fractional lumen *area* reduction at the stenosis center.
    #[serde(default)]
    pub stenosis: f64,
    #[serde(default = "default_stenosis_length")]
    pub stenosis_length: f64,
    #[serde(default = "default_major_radius")]
    pub major_radius: f64,
    #[serde(default = "default_lumen_hu")]
    pub lumen_hu: f64,
    #[serde(default = "default_wall_hu")]
    pub wall_hu: f64,
    #[serde(default = "default_fat_hu")]
    pub fat_hu: f64,
    #[serde(default = "default_background_hu")]
    pub background_hu: f64,
    #[serde(default)]
    pub components: Vec<PlaqueComponent>,
    #[serde(default)]
    pub spheres: Vec<Sphere>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    /// High-kV attenuations for the dual-energy pair.
    #[serde(default)]
    pub lumen_hu_high: Option<f64>,
    #[serde(default)]
    pub wall_hu_high: Option<f64>,
    #[serde(default)]
    pub fat_hu_high: Option<f64>,
    #[serde(default)]
    pub background_hu_high: Option<f64>,
    /// Content of the high-kV volume is displaced by this world translation.
    #[serde(default)]
    pub high_shift: Vec3,
}

impl PhantomSpec {
    /// A spec of `kind` with all defaults.
    pub fn new(kind: PhantomKind) -> Self {
        let mut s: PhantomSpec =
            serde_json::from_value(serde_json::json!({ "kind": kind })).expect("defaults deserialize");
        match kind {
            PhantomKind::StenosedTube => s.stenosis = 0.5,
            PhantomKind::PlaqueTube => s.outer_radius = Some(3.0),
            PhantomKind::FatCollarTube => {
                s.outer_radius = Some(3.0);
                s.fat_radius = Some(12.0);
                s.background_hu = 40.0;
            }
            PhantomKind::DePair => {
                s.outer_radius = Some(3.0);
                s.lumen_hu = 400.0;
                s.lumen_hu_high = Some(250.0);
                s.wall_hu_high = Some(55.0);
                s.background_hu_high = Some(-45.0);
            }
            _ => {}
        }
        s
    }

    fn with_dims(mut self, dims: [usize; 3]) -> Self {
        self.dims = dims;
        self
    }
}

/// Centerline geometry of a phantom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AxisGeometry {
    /// Segment from `start` along unit `dir` for `length` mm.
    Line { start: Vec3, dir: Vec3, length: f64 },
    /// Arc of `radius` around `center` from direction `u` toward `v` spanning `angle` radians.
    Arc {
        center: Vec3,
        u: Vec3,
        v: Vec3,
        radius: f64,
        angle: f64,
    },
}

/// Closest-point query result against an axis.
#[derive(Clone, Copy, Debug)]
pub struct AxisProjection {
    pub s: f64,
    pub distance: f64,
    /// Angle around the axis in the local (normal, binormal) frame.
    pub theta: f64,
    /// Whether the closest point is interior to the axis span (not past a cap).
    pub within_span: bool,
    /// Distance to the nearer end cap plane (infinite for lines clipped by the volume).
    pub cap_distance: f64,
}

impl AxisGeometry {
    pub fn length(&self) -> f64 {
        match self {
            AxisGeometry::Line { length, .. } => *length,
            AxisGeometry::Arc { radius, angle, .. } => radius * angle,
        }
    }

    pub fn point_at(&self, s: f64) -> Vec3 {
        match self {
            AxisGeometry::Line { start, dir, .. } => geom::axpy(*start, s, *dir),
            AxisGeometry::Arc {
                center, u, v, radius, ..
            } => {
                let phi = s / radius;
                geom::add(
                    *center,
                    geom::add(geom::scale(*u, radius * phi.cos()), geom::scale(*v, radius * phi.sin())),
                )
            }
        }
    }

    /// Unit tangent and a fixed cross-section frame at arclength `s`.
    pub fn frame_at(&self, s: f64) -> (Vec3, Vec3, Vec3) {
        match self {
            AxisGeometry::Line { dir, .. } => {
                let n = geom::any_perpendicular(*dir);
                (*dir, n, geom::cross(*dir, n))
            }
            AxisGeometry::Arc { u, v, radius, .. } => {
                let phi = s / radius;
                let radial = geom::add(geom::scale(*u, phi.cos()), geom::scale(*v, phi.sin()));
                let t = geom::add(geom::scale(*u, -phi.sin()), geom::scale(*v, phi.cos()));
                (t, radial, geom::cross(t, radial))
            }
        }
    }

    pub fn project(&self, p: Vec3) -> AxisProjection {
        match self {
            AxisGeometry::Line { start, dir, length } => {
                let d = geom::sub(p, *start);
                let s = geom::dot(d, *dir);
                let radial = geom::axpy(d, -s, *dir);
                let n = geom::any_perpendicular(*dir);
                let b = geom::cross(*dir, n);
                AxisProjection {
                    s: s.clamp(0.0, *length),
                    distance: geom::norm(radial),
                    theta: geom::dot(radial, b).atan2(geom::dot(radial, n)),
                    within_span: true,
                    cap_distance: f64::INFINITY,
                }
            }
            AxisGeometry::Arc {
                center,
                u,
                v,
                radius,
                angle,
            } => {
                let d = geom::sub(p, *center);
                let x = geom::dot(d, *u);
                let y = geom::dot(d, *v);
                let w = geom::cross(*u, *v);
                let h = geom::dot(d, w);
                let rho = x.hypot(y);
                let mut phi = y.atan2(x);
                // map into the span's neighbourhood so caps compare sensibly
                if phi < -0.5 * (2.0 * PI - angle) {
                    phi += 2.0 * PI;
                }
                let within_span = (0.0..=*angle).contains(&phi);
                let phi_c = phi.clamp(0.0, *angle);
                let cap_distance = if within_span {
                    (rho * phi.sin()).min(rho * (angle - phi).sin())
                } else {
                    0.0
                };
                let distance = if within_span {
                    (rho - radius).hypot(h)
                } else {
                    geom::dist(p, self.point_at(phi_c * radius))
                };
                AxisProjection {
                    s: phi_c * radius,
                    distance,
                    theta: h.atan2(rho - radius),
                    within_span,
                    cap_distance,
                }
            }
        }
    }

    /// Densely sampled polyline of the axis.
    pub fn sample(&self, step: f64) -> Vec<Vec3> {
        let len = self.length();
        let n = (len / step).ceil().max(1.0) as usize;
        (0..=n).map(|i| self.point_at(len * i as f64 / n as f64)).collect()
    }
}

/// Analytic description of the phantom: used both to voxelize and as ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub kind: PhantomKind,
    pub axis: AxisGeometry,
    pub lumen_radius: f64,
    pub outer_radius: Option<f64>,
    pub fat_radius: Option<f64>,
    pub stenosis: f64,
    pub stenosis_length: f64,
    /// Arclength of the stenosis center.
    pub stenosis_center: f64,
    /// Analytic volumes (mm³) by material name.
    pub component_volumes: BTreeMap<String, f64>,
}

impl GroundTruth {
    fn bump(&self, s: f64) -> f64 {
        if self.stenosis <= 0.0 {
            return 0.0;
        }
        let half = 0.5 * self.stenosis_length;
        let x = (s - self.stenosis_center) / half;
        if x.abs() >= 1.0 {
            0.0
        } else {
            0.5 * (1.0 + (PI * x).cos())
        }
    }

    /// True lumen radius at arclength `s`.
    pub fn lumen_radius_at(&self, s: f64) -> f64 {
        self.lumen_radius * (1.0 - self.stenosis * self.bump(s)).sqrt()
    }

    pub fn lumen_area_at(&self, s: f64) -> f64 {
        PI * self.lumen_radius_at(s).powi(2)
    }

    pub fn min_lumen_area(&self) -> f64 {
        PI * self.lumen_radius.powi(2) * (1.0 - self.stenosis)
    }

    pub fn length(&self) -> f64 {
        self.axis.length()
    }

    /// Distance from `p` to the analytic centerline.
    pub fn distance_to_centerline(&self, p: Vec3) -> f64 {
        let pr = self.axis.project(p);
        if pr.within_span {
            pr.distance
        } else {
            geom::dist(p, self.axis.point_at(pr.s))
        }
    }

    pub fn centerline(&self, step: f64) -> Vec<Vec3> {
        self.axis.sample(step)
    }
}

/// Phantom volume(s) plus ground truth.
#[derive(Clone, Debug)]
pub struct Phantom {
    pub volume: Volume,
    /// High-kV volume of a dual-energy pair.
    pub companion: Option<Volume>,
    pub truth: GroundTruth,
}

struct Materials {
    lumen: f64,
    wall: f64,
    fat: f64,
    background: f64,
    components: Vec<(f64, f64, f64)>,
    spheres: Vec<(Vec3, f64, f64)>,
}

struct Scene<'a> {
    truth: &'a GroundTruth,
    mat: Materials,
}

impl Scene<'_> {
    fn hu_at(&self, p: Vec3) -> f64 {
        self.hu_with(p, &self.truth.axis.project(p))
    }

    fn hu_with(&self, p: Vec3, pr: &AxisProjection) -> f64 {
        for &(c, r, hu) in &self.mat.spheres {
            if geom::dist(p, c) < r {
                return hu;
            }
        }
        if !pr.within_span {
            return self.mat.background;
        }
        let d = pr.distance;
        if d < self.truth.lumen_radius_at(pr.s) {
            return self.mat.lumen;
        }
        if let Some(ro) = self.truth.outer_radius {
            if d < ro {
                let deg = pr.theta.to_degrees().rem_euclid(360.0);
                for &(a, b, hu) in &self.mat.components {
                    if deg >= a && deg < b {
                        return hu;
                    }
                }
                return self.mat.wall;
            }
        }
        if let Some(rf) = self.truth.fat_radius {
            if d < rf {
                return self.mat.fat;
            }
        }
        self.mat.background
    }

    /// Whether a voxel centered at `p` might straddle an interface.
    fn near_interface(&self, p: Vec3, pr: &AxisProjection, margin: f64) -> bool {
        for &(c, r, _) in &self.mat.spheres {
            if (geom::dist(p, c) - r).abs() < margin {
                return true;
            }
        }
        let outermost = self.truth.fat_radius.or(self.truth.outer_radius).unwrap_or(self.truth.lumen_radius);
        if !pr.within_span || pr.cap_distance < margin {
            return pr.distance < outermost + margin;
        }
        let d = pr.distance;
        let radii = [Some(self.truth.lumen_radius_at(pr.s)), self.truth.outer_radius, self.truth.fat_radius];
        if radii.iter().flatten().any(|r| (d - r).abs() < margin) {
            return true;
        }
        // sector borders inside the wall ring
        if let Some(ro) = self.truth.outer_radius {
            if !self.mat.components.is_empty() && d < ro + margin {
                return true;
            }
        }
        false
    }
}

fn validate(spec: &PhantomSpec) -> Result<()> {
    let bad = |m: String| Err(Error::PhantomSpec(m));
    if spec.dims.contains(&0) {
        return bad(format!("dims must be positive, got {:?}", spec.dims));
    }
    if spec.spacing.iter().any(|&s| !(s > 0.0)) {
        return bad(format!("spacing must be positive, got {:?}", spec.spacing));
    }
    if !(spec.lumen_radius > 0.0) {
        return bad("lumen radius must be positive".into());
    }
    if let Some(ro) = spec.outer_radius {
        if !(spec.lumen_radius < ro) {
            return bad(format!("lumen radius {} must be below outer radius {ro}", spec.lumen_radius));
        }
    }
    if let (Some(rf), Some(ro)) = (spec.fat_radius, spec.outer_radius) {
        if !(ro < rf) {
            return bad(format!("outer radius {ro} must be below fat radius {rf}"));
        }
    }
    if !(0.0..1.0).contains(&spec.stenosis) {
        return bad(format!("stenosis fraction {} outside [0, 1)", spec.stenosis));
    }
    if !(spec.noise_sigma >= 0.0) {
        return bad("noise sigma must be non-negative".into());
    }
    for c in &spec.components {
        if !(c.theta_start_deg < c.theta_end_deg) {
            return bad(format!("component {} has an empty angular range", c.name));
        }
    }
    Ok(())
}

/// Clip the infinite line `center + t * dir` to the voxel-center box.
fn clip_line(volume_lo: Vec3, volume_hi: Vec3, center: Vec3, dir: Vec3) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-12 {
            if center[a] < volume_lo[a] || center[a] > volume_hi[a] {
                return None;
            }
            continue;
        }
        let ta = (volume_lo[a] - center[a]) / dir[a];
        let tb = (volume_hi[a] - center[a]) / dir[a];
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t1 > t0).then_some((t0, t1))
}

fn build_truth(spec: &PhantomSpec) -> Result<GroundTruth> {
    let lo = spec.origin;
    let hi = [
        spec.origin[0] + spec.spacing[0] * (spec.dims[0] - 1) as f64,
        spec.origin[1] + spec.spacing[1] * (spec.dims[1] - 1) as f64,
        spec.origin[2] + spec.spacing[2] * (spec.dims[2] - 1) as f64,
    ];
    let mid = geom::scale(geom::add(lo, hi), 0.5);
    let axis_dir = geom::normalize(spec.axis)
        .ok_or_else(|| Error::PhantomSpec("axis must be non-zero".into()))?;
    let needs_wall = matches!(
        spec.kind,
        PhantomKind::PlaqueTube | PhantomKind::FatCollarTube | PhantomKind::DePair
    );
    let outer = match (spec.outer_radius, needs_wall) {
        (Some(r), _) => Some(r),
        (None, true) => return Err(Error::PhantomSpec(format!("{:?} needs an outer radius", spec.kind))),
        (None, false) => None,
    };
    let fat = match (spec.fat_radius, spec.kind) {
        (Some(r), _) => Some(r),
        (None, PhantomKind::FatCollarTube) => {
            return Err(Error::PhantomSpec("fat collar tube needs a fat radius".into()))
        }
        (None, _) => None,
    };
    let max_r = fat.or(outer).unwrap_or(spec.lumen_radius);

    let axis = if spec.kind == PhantomKind::CurvedTube {
        let normal = axis_dir;
        let u = geom::any_perpendicular(normal);
        let v = geom::cross(normal, u);
        let r = spec.major_radius;
        // default: centre the quarter arc's bounding square in the box
        let center = spec
            .center
            .unwrap_or_else(|| geom::sub(mid, geom::scale(geom::add(u, v), 0.5 * r)));
        AxisGeometry::Arc {
            center,
            u,
            v,
            radius: r,
            angle: 0.5 * PI,
        }
    } else {
        let center = spec.center.unwrap_or(mid);
        let (t0, t1) = clip_line(lo, hi, center, axis_dir)
            .ok_or_else(|| Error::PhantomSpec("axis misses the volume".into()))?;
        AxisGeometry::Line {
            start: geom::axpy(center, t0, axis_dir),
            dir: axis_dir,
            length: t1 - t0,
        }
    };

    // extent check: the outermost layer must fit inside the voxel-center box
    let inside = |p: Vec3| (0..3).all(|a| p[a] >= lo[a] - 1e-9 && p[a] <= hi[a] + 1e-9);
    let len = axis.length();
    let checks: Vec<f64> = match axis {
        AxisGeometry::Line { .. } => vec![0.5 * len],
        AxisGeometry::Arc { .. } => (0..=16).map(|i| len * i as f64 / 16.0).collect(),
    };
    for s in checks {
        let (_, n, b) = axis.frame_at(s);
        let c = axis.point_at(s);
        for k in 0..16 {
            let a = 2.0 * PI * k as f64 / 16.0;
            let p = geom::add(c, geom::add(geom::scale(n, max_r * a.cos()), geom::scale(b, max_r * a.sin())));
            if !inside(p) {
                return Err(Error::PhantomSpec(format!(
                    "radius {max_r} mm around the axis at s = {s:.2} mm leaves the volume"
                )));
            }
        }
    }
    for sp in &spec.spheres {
        for a in 0..3 {
            if sp.center[a] - sp.radius < lo[a] || sp.center[a] + sp.radius > hi[a] {
                return Err(Error::PhantomSpec(format!("sphere at {:?} leaves the volume", sp.center)));
            }
        }
    }

    let stenosis = if spec.kind == PhantomKind::StenosedTube { spec.stenosis } else { 0.0 };
    if stenosis > 0.0 && spec.stenosis_length > len {
        return Err(Error::PhantomSpec("stenosis longer than the tube".into()));
    }
    let mut truth = GroundTruth {
        kind: spec.kind,
        axis,
        lumen_radius: spec.lumen_radius,
        outer_radius: outer,
        fat_radius: fat,
        stenosis,
        stenosis_length: spec.stenosis_length,
        stenosis_center: 0.5 * len,
        component_volumes: BTreeMap::new(),
    };

    let r2 = spec.lumen_radius.powi(2);
    let lumen_volume = PI * r2 * (len - stenosis * 0.5 * spec.stenosis_length);
    truth.component_volumes.insert("lumen".into(), lumen_volume);
    if let Some(ro) = outer {
        let ring = ro * ro - r2;
        let mut wall_fraction = 1.0;
        for c in &spec.components {
            let span = (c.theta_end_deg.min(360.0) - c.theta_start_deg.max(0.0)).max(0.0) / 360.0;
            wall_fraction -= span;
            truth
                .component_volumes
                .insert(c.name.clone(), span * PI * ring * len);
        }
        truth
            .component_volumes
            .insert("wall".into(), wall_fraction.max(0.0) * PI * ring * len);
        if let Some(rf) = fat {
            truth
                .component_volumes
                .insert("fat".into(), PI * (rf * rf - ro * ro) * len);
        }
    }
    for (i, sp) in spec.spheres.iter().enumerate() {
        truth
            .component_volumes
            .insert(format!("sphere{i}"), 4.0 / 3.0 * PI * sp.radius.powi(3));
    }
    Ok(truth)
}

fn voxelize(spec: &PhantomSpec, scene: &Scene, shift: Vec3, noise_seed: u64) -> Result<Volume> {
    let [nx, ny, nz] = spec.dims;
    let sp = spec.spacing;
    let margin = 0.5 * geom::norm(sp) + 0.05;
    let offsets = [-1.0 / 3.0, 0.0, 1.0 / 3.0];
    let mut data = Vec::with_capacity(nx * ny * nz);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::PhantomSpec(e.to_string()))?)
    } else {
        None
    };
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let p = [
                    spec.origin[0] + sp[0] * i as f64 - shift[0],
                    spec.origin[1] + sp[1] * j as f64 - shift[1],
                    spec.origin[2] + sp[2] * k as f64 - shift[2],
                ];
                let pr = scene.truth.axis.project(p);
                let mut v = if scene.near_interface(p, &pr, margin) {
                    let mut acc = 0.0;
                    for dz in offsets {
                        for dy in offsets {
                            for dx in offsets {
                                acc += scene.hu_at([p[0] + dx * sp[0], p[1] + dy * sp[1], p[2] + dz * sp[2]]);
                            }
                        }
                    }
                    acc / 27.0
                } else {
                    scene.hu_with(p, &pr)
                };
                if let Some(n) = &noise {
                    v += n.sample(&mut rng);
                }
                data.push(v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16);
            }
        }
    }
    Volume::new(spec.dims, spec.spacing, spec.origin, data)
}

/// Build the phantom described by `spec`.
pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    validate(spec)?;
    let truth = build_truth(spec)?;
    let low = Scene {
        truth: &truth,
        mat: Materials {
            lumen: spec.lumen_hu,
            wall: spec.wall_hu,
            fat: spec.fat_hu,
            background: spec.background_hu,
            components: spec
                .components
                .iter()
                .map(|c| (c.theta_start_deg, c.theta_end_deg, c.hu))
                .collect(),
            spheres: spec.spheres.iter().map(|s| (s.center, s.radius, s.hu)).collect(),
        },
    };
    let volume = voxelize(spec, &low, [0.0; 3], spec.seed)?;
    let companion = if spec.kind == PhantomKind::DePair {
        let high = Scene {
            truth: &truth,
            mat: Materials {
                lumen: spec.lumen_hu_high.unwrap_or(spec.lumen_hu),
                wall: spec.wall_hu_high.unwrap_or(spec.wall_hu),
                fat: spec.fat_hu_high.unwrap_or(spec.fat_hu),
                background: spec.background_hu_high.unwrap_or(spec.background_hu),
                components: spec
                    .components
                    .iter()
                    .map(|c| (c.theta_start_deg, c.theta_end_deg, c.hu_high.unwrap_or(c.hu)))
                    .collect(),
                spheres: spec
                    .spheres
                    .iter()
                    .map(|s| (s.center, s.radius, s.hu_high.unwrap_or(s.hu)))
                    .collect(),
            },
        };
        Some(voxelize(spec, &high, spec.high_shift, spec.seed.wrapping_add(0x9e37_79b9))?)
    } else {
        None
    };
    Ok(Phantom {
        volume,
        companion,
        truth,
    })
}

impl Phantom {
    /// Small default phantom of `kind`, mostly for tests and demos.
    pub fn quick(kind: PhantomKind, dims: [usize; 3]) -> Result<Phantom> {
        make_phantom(&PhantomSpec::new(kind).with_dims(dims))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_tube_axis_and_background() {
        let mut spec = PhantomSpec::new(PhantomKind::StraightTube);
        spec.dims = [41, 41, 21];
        let ph = make_phantom(&spec).unwrap();
        let v = &ph.volume;
        // axis passes through voxel (20, 20, *)
        assert_eq!(v.get(20, 20, 10), 350);
        // 5 mm off-axis = 12.5 voxels
        let off = v.world_to_voxel(geom::add(v.center_of(v.index(20, 20, 10)), [5.0, 0.0, 0.0]));
        assert_eq!(v.get(off[0].round() as usize, 20, 10), -50);
    }

    #[test]
    fn fat_shell_volume_matches_annulus() {
        let mut spec = PhantomSpec::new(PhantomKind::FatCollarTube);
        spec.dims = [80, 80, 20];
        let ph = make_phantom(&spec).unwrap();
        let t = &ph.truth;
        let (ro, rf) = (t.outer_radius.unwrap(), t.fat_radius.unwrap());
        let want = PI * (rf * rf - ro * ro) * t.length();
        assert!((t.component_volumes["fat"] - want).abs() < 1e-9);
    }

    #[test]
    fn stenosis_minimum_area() {
        let mut spec = PhantomSpec::new(PhantomKind::StenosedTube);
        spec.dims = [32, 32, 60];
        let ph = make_phantom(&spec).unwrap();
        let t = &ph.truth;
        let r = t.lumen_radius;
        assert!((t.min_lumen_area() - 0.5 * PI * r * r).abs() < 1e-12);
        assert!((t.lumen_area_at(t.stenosis_center) - t.min_lumen_area()).abs() < 1e-9);
    }

    #[test]
    fn supersampled_values_within_material_range() {
        let mut spec = PhantomSpec::new(PhantomKind::PlaqueTube);
        spec.dims = [32, 32, 8];
        let ph = make_phantom(&spec).unwrap();
        let (lo, hi) = (spec.background_hu.min(spec.wall_hu), spec.lumen_hu);
        for &v in ph.volume.data() {
            assert!((v as f64) >= lo && (v as f64) <= hi, "{v}");
        }
        // partial volume actually happens
        assert!(ph
            .volume
            .data()
            .iter()
            .any(|&v| v != 350 && v != 60 && v != -50));
    }

    #[test]
    fn geometry_exceeding_extent_is_rejected() {
        let mut spec = PhantomSpec::new(PhantomKind::FatCollarTube);
        spec.dims = [20, 20, 20];
        assert!(matches!(make_phantom(&spec), Err(Error::PhantomSpec(_))));
        let mut spec = PhantomSpec::new(PhantomKind::PlaqueTube);
        spec.outer_radius = Some(1.0);
        assert!(matches!(make_phantom(&spec), Err(Error::PhantomSpec(_))));
    }

    #[test]
    fn curved_tube_fits_and_projects() {
        let mut spec = PhantomSpec::new(PhantomKind::CurvedTube);
        spec.dims = [128, 128, 24];
        spec.major_radius = 18.0;
        let ph = make_phantom(&spec).unwrap();
        let t = &ph.truth;
        let pts = t.centerline(0.5);
        for p in &pts {
            assert!(t.distance_to_centerline(*p) < 1e-9);
        }
        // away from the caps the axis sits deep inside the lumen
        for p in &pts[2..pts.len() - 2] {
            assert!(ph.volume.sample_trilinear(*p).unwrap() > 300.0);
        }
    }

    #[test]
    fn de_pair_has_shifted_companion() {
        let mut spec = PhantomSpec::new(PhantomKind::DePair);
        spec.dims = [32, 32, 16];
        spec.high_shift = [0.8, 0.0, 0.0];
        let ph = make_phantom(&spec).unwrap();
        let high = ph.companion.unwrap();
        let c = ph.volume.voxel_to_world([15.5, 15.5, 8.0]);
        // lumen present at the shifted position in the high scan
        assert!(high.sample_trilinear(geom::add(c, [0.8, 0.0, 0.0])).unwrap() > 200.0);
    }
}
