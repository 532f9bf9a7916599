//! Dual-energy pairing, rigid registration and DE-index tissue classification.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::plaque::{ClassCounts, PlaqueRegion};
use crate::volume::Volume;

/// Acquisition metadata kept in a JSON sidecar next to each volume.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeMeta {
    #[serde(default)]
    pub kvp: Option<f64>,
    #[serde(default)]
    pub frame_of_reference: Option<String>,
    #[serde(default)]
    pub series_time: Option<String>,
}

/// `scan.mhd` → `scan.meta.json`.
pub fn meta_path_for(volume_path: &Path) -> PathBuf {
    volume_path.with_extension("meta.json")
}

/// Read the sidecar of `volume_path`; a missing sidecar yields empty metadata.
pub fn load_meta(volume_path: &Path) -> Result<DeMeta> {
    let p = meta_path_for(volume_path);
    if !p.exists() {
        return Ok(DeMeta::default());
    }
    Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?)
}

/// Minimum tube-voltage difference for two scans to count as a DE pair.
pub const MIN_KVP_GAP: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSlot {
    First,
    Second,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDecision {
    pub paired: bool,
    /// Which argument is the low-kV scan, when paired.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub low: Option<PairSlot>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Two scans pair iff their kVp differ by at least [`MIN_KVP_GAP`] and they share
/// a frame of reference. Missing kVp or frame of reference is undecidable.
pub fn detect_de_pair(a: &DeMeta, b: &DeMeta) -> Result<PairDecision> {
    let (Some(ka), Some(kb)) = (a.kvp, b.kvp) else {
        return Err(Error::Undecidable("kVp missing from scan metadata".into()));
    };
    let (Some(fa), Some(fb)) = (&a.frame_of_reference, &b.frame_of_reference) else {
        return Err(Error::Undecidable("frame of reference missing from scan metadata".into()));
    };
    let not = |reason: String| PairDecision {
        paired: false,
        low: None,
        reason: Some(reason),
    };
    if (ka - kb).abs() < MIN_KVP_GAP {
        return Ok(not(format!("kVp {ka} and {kb} differ by less than {MIN_KVP_GAP}")));
    }
    if fa != fb {
        return Ok(not(format!("frames of reference differ ({fa} vs {fb})")));
    }
    Ok(PairDecision {
        paired: true,
        low: Some(if ka < kb { PairSlot::First } else { PairSlot::Second }),
        reason: None,
    })
}

/// `T(x) = R x + t` with `R = Rz·Ry·Rx`, mapping high-kV world coordinates into
/// low-kV world coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub translation: Vec3,
    /// Radians.
    pub rotation_euler_xyz: Vec3,
}

impl RigidTransform {
    pub fn apply(&self, x: Vec3) -> Vec3 {
        geom::add(geom::mat_vec(&geom::rotation_xyz(self.rotation_euler_xyz), x), self.translation)
    }

    pub fn apply_inverse(&self, y: Vec3) -> Vec3 {
        geom::mat_t_vec(&geom::rotation_xyz(self.rotation_euler_xyz), geom::sub(y, self.translation))
    }

    /// Rotation by `angles` about `center`, then translation by `shift`.
    fn about(center: Vec3, shift: Vec3, angles: Vec3) -> Self {
        let r = geom::rotation_xyz(angles);
        let t = geom::sub(geom::add(shift, center), geom::mat_vec(&r, center));
        Self {
            translation: t,
            rotation_euler_xyz: angles,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    #[serde(flatten)]
    pub transform: RigidTransform,
    /// NCC at the optimum on the full-resolution grids.
    pub score: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationParams {
    /// Downsampling factors, coarsest first.
    pub levels: Vec<usize>,
    /// Half-width of the coarse translation grid (mm).
    pub search_mm: f64,
    pub min_step_mm: f64,
    pub min_step_deg: f64,
    /// Scores below this attach a failure warning.
    pub fail_score: f64,
    /// Upper bound on NCC sample points per evaluation.
    pub max_samples: usize,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            levels: vec![4, 2, 1],
            search_mm: 10.0,
            min_step_mm: 0.05,
            min_step_deg: 0.1,
            fail_score: 0.2,
            max_samples: 200_000,
        }
    }
}

/// A float image, possibly a block-averaged copy of a volume.
struct Grid {
    dims: [usize; 3],
    spacing: Vec3,
    origin: Vec3,
    data: Vec<f32>,
}

impl Grid {
    fn from_volume(v: &Volume, f: usize) -> Self {
        let d = v.dims();
        let dims = [0, 1, 2].map(|a| (d[a] / f).max(1));
        let sp = v.spacing();
        let mut data = vec![0.0f32; dims[0] * dims[1] * dims[2]];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let mut sum = 0.0f64;
                    let mut n = 0usize;
                    for k in z * f..((z + 1) * f).min(d[2]) {
                        for j in y * f..((y + 1) * f).min(d[1]) {
                            for i in x * f..((x + 1) * f).min(d[0]) {
                                sum += v.get(i, j, k) as f64;
                                n += 1;
                            }
                        }
                    }
                    data[(z * dims[1] + y) * dims[0] + x] = (sum / n as f64) as f32;
                }
            }
        }
        let half = (f as f64 - 1.0) / 2.0;
        Self {
            dims,
            spacing: [0, 1, 2].map(|a| sp[a] * f as f64),
            origin: [0, 1, 2].map(|a| v.origin()[a] + sp[a] * half),
            data,
        }
    }

    fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        [
            self.origin[0] + self.spacing[0] * i as f64,
            self.origin[1] + self.spacing[1] * j as f64,
            self.origin[2] + self.spacing[2] * k as f64,
        ]
    }

    /// Trilinear value at `p`, `None` more than half a cell outside the grid.
    fn sample(&self, p: Vec3) -> Option<f64> {
        let mut i0 = [0usize; 3];
        let mut f = [0.0f64; 3];
        for a in 0..3 {
            let n = self.dims[a];
            let c = (p[a] - self.origin[a]) / self.spacing[a];
            if c < -0.5 || c > n as f64 - 0.5 {
                return None;
            }
            let c = c.clamp(0.0, (n - 1) as f64);
            let lo = (c.floor() as usize).min(n.saturating_sub(2));
            i0[a] = lo;
            f[a] = if n > 1 { c - lo as f64 } else { 0.0 };
        }
        let at = |a: usize, b: usize, c: usize| {
            let i = (i0[0] + a).min(self.dims[0] - 1);
            let j = (i0[1] + b).min(self.dims[1] - 1);
            let k = (i0[2] + c).min(self.dims[2] - 1);
            self.data[(k * self.dims[1] + j) * self.dims[0] + i] as f64
        };
        let lx = |b, c| at(0, b, c) * (1.0 - f[0]) + at(1, b, c) * f[0];
        let ly = |c| lx(0, c) * (1.0 - f[1]) + lx(1, c) * f[1];
        Some(ly(0) * (1.0 - f[2]) + ly(1) * f[2])
    }
}

/// Fixed sample points of the low-kV grid with their values.
struct Samples {
    points: Vec<Vec3>,
    values: Vec<f64>,
}

fn samples(g: &Grid, max: usize) -> Samples {
    let n = g.data.len();
    let stride = ((n as f64 / max as f64).cbrt().ceil() as usize).max(1);
    let mut points = Vec::new();
    let mut values = Vec::new();
    for k in (0..g.dims[2]).step_by(stride) {
        for j in (0..g.dims[1]).step_by(stride) {
            for i in (0..g.dims[0]).step_by(stride) {
                points.push(g.point(i, j, k));
                values.push(g.data[(k * g.dims[1] + j) * g.dims[0] + i] as f64);
            }
        }
    }
    Samples { points, values }
}

/// Minimum fraction of sample points that must land inside the moving grid.
const MIN_OVERLAP: f64 = 0.1;

/// NCC between the fixed samples and the moving grid pulled back through `t`.
fn ncc(fixed: &Samples, moving: &Grid, t: &RigidTransform) -> f64 {
    let r = geom::rotation_xyz(t.rotation_euler_xyz);
    let (mut n, mut sa, mut sb, mut saa, mut sbb, mut sab) = (0usize, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (p, &a) in fixed.points.iter().zip(&fixed.values) {
        let q = geom::mat_t_vec(&r, geom::sub(*p, t.translation));
        if let Some(b) = moving.sample(q) {
            n += 1;
            sa += a;
            sb += b;
            saa += a * a;
            sbb += b * b;
            sab += a * b;
        }
    }
    if (n as f64) < MIN_OVERLAP * fixed.points.len() as f64 || n < 2 {
        return -1.0;
    }
    let nf = n as f64;
    let cov = sab - sa * sb / nf;
    let va = saa - sa * sa / nf;
    let vb = sbb - sb * sb / nf;
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    (cov / (va * vb).sqrt()).clamp(-1.0, 1.0)
}

/// Parameters `[tx, ty, tz, ax, ay, az]` (mm, radians) about a fixed center.
struct Objective<'a> {
    fixed: Samples,
    moving: &'a Grid,
    center: Vec3,
}

impl Objective<'_> {
    fn transform(&self, x: &[f64; 6]) -> RigidTransform {
        RigidTransform::about(self.center, [x[0], x[1], x[2]], [x[3], x[4], x[5]])
    }

    fn score(&self, x: &[f64; 6]) -> f64 {
        ncc(&self.fixed, self.moving, &self.transform(x))
    }
}

/// Pattern search: try ±step along each parameter, then extrapolate along the
/// net move of the cycle; halve all steps after a cycle without improvement.
fn pattern_search(obj: &Objective, x: &mut [f64; 6], best: &mut f64, steps: [f64; 2], min: [f64; 2]) {
    let mut step = steps;
    loop {
        let start = *x;
        for c in 0..6 {
            let h = step[c / 3];
            for dir in [1.0, -1.0] {
                let mut y = *x;
                y[c] += dir * h;
                let s = obj.score(&y);
                if s > *best {
                    *best = s;
                    *x = y;
                    break;
                }
            }
        }
        if *x != start {
            // follow the cycle's direction while it keeps paying off
            let d: Vec<f64> = (0..6).map(|c| x[c] - start[c]).collect();
            loop {
                let mut y = *x;
                for c in 0..6 {
                    y[c] += d[c];
                }
                let s = obj.score(&y);
                if s > *best {
                    *best = s;
                    *x = y;
                } else {
                    break;
                }
            }
            continue;
        }
        if step[0] <= min[0] && step[1] <= min[1] {
            return;
        }
        step = [(step[0] / 2.0).max(min[0]), (step[1] / 2.0).max(min[1])];
    }
}

/// Rigid registration maximizing NCC between `low` and `high` pulled back
/// through the transform. Deterministic for given inputs.
///
/// Each level (coarsest first) block-averages both volumes; the coarsest runs a
/// translation grid search before pattern search refines all six parameters.
pub fn register_rigid(low: &Volume, high: &Volume, p: &RegistrationParams) -> Result<Registration> {
    if p.levels.is_empty() || p.levels.contains(&0) || p.max_samples == 0 {
        return Err(Error::Parameter("registration needs positive levels and samples".into()));
    }
    if !(p.min_step_mm > 0.0 && p.min_step_deg > 0.0 && p.search_mm >= 0.0) {
        return Err(Error::Parameter("registration steps must be positive".into()));
    }
    let (lo, hi) = low.domain_bounds();
    let center = geom::scale(geom::add(lo, hi), 0.5);
    let radius = (geom::dist(lo, hi) / 2.0).max(1e-6);
    let mut x = [0.0f64; 6];
    for (li, &f) in p.levels.iter().enumerate() {
        let fixed_grid = Grid::from_volume(low, f);
        let moving = Grid::from_volume(high, f);
        let obj = Objective {
            fixed: samples(&fixed_grid, p.max_samples),
            moving: &moving,
            center,
        };
        let h = fixed_grid.spacing.iter().cloned().fold(0.0, f64::max);
        let mut best = obj.score(&x);
        if li == 0 && p.search_mm > 0.0 {
            let n = (p.search_mm / h).floor() as i64;
            for k in -n..=n {
                for j in -n..=n {
                    for i in -n..=n {
                        let y = [i as f64 * h, j as f64 * h, k as f64 * h, 0.0, 0.0, 0.0];
                        let s = obj.score(&y);
                        if s > best {
                            best = s;
                            x = y;
                        }
                    }
                }
            }
        }
        // rotation steps move the volume boundary about as far as translation steps
        let rot = h / radius;
        let min = if li + 1 == p.levels.len() {
            [p.min_step_mm, p.min_step_deg.to_radians()]
        } else {
            [h / 4.0, rot / 4.0]
        };
        pattern_search(&obj, &mut x, &mut best, [h, rot], min);
    }
    let full = Grid::from_volume(high, 1);
    let obj = Objective {
        fixed: samples(&Grid::from_volume(low, 1), p.max_samples),
        moving: &full,
        center,
    };
    let score = obj.score(&x);
    let mut warnings = Vec::new();
    if score < p.fail_score {
        warnings.push(format!("registration failed: similarity {score:.3} below {}", p.fail_score));
    }
    Ok(Registration {
        transform: obj.transform(&x),
        score,
        warnings,
    })
}

pub const DEI_MIN_HU: f64 = -1000.0;
pub const DEI_MAX_HU: f64 = 3071.0;

/// `(low − high) / (low + high + 2000)` after clamping both inputs to
/// `[DEI_MIN_HU, DEI_MAX_HU]`.
pub fn de_index(hu_low: f64, hu_high: f64) -> Result<f64> {
    let l = hu_low.clamp(DEI_MIN_HU, DEI_MAX_HU);
    let h = hu_high.clamp(DEI_MIN_HU, DEI_MAX_HU);
    let denom = l + h + 2000.0;
    if denom == 0.0 {
        return Err(Error::Degenerate("DE index denominator is zero".into()));
    }
    Ok((l - h) / denom)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeThresholds {
    /// Low-kV HU at or above which a voxel is calcified.
    pub calc_threshold: f64,
    /// DE index below which a non-calcified voxel is lipid-rich. Not a clinical constant.
    pub dei_threshold: f64,
}

impl Default for DeThresholds {
    fn default() -> Self {
        Self {
            calc_threshold: 130.0,
            dei_threshold: 0.007,
        }
    }
}

/// A registered dual-energy pair.
#[derive(Clone, Copy, Debug)]
pub struct DePair<'a> {
    pub low: &'a Volume,
    pub high: &'a Volume,
    pub transform: RigidTransform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeComposition {
    pub counts: ClassCounts,
    pub lipid_rich_mm3: f64,
    pub fibrotic_mm3: f64,
    pub calcified_mm3: f64,
    /// Region voxels left out: high-kV sample outside its domain, or an undefined index.
    pub excluded: u64,
    pub thresholds: DeThresholds,
}

/// Classify one voxel pair; calcification on the low-kV value takes precedence.
pub fn de_classify(hu_low: f64, hu_high: f64, t: &DeThresholds) -> Result<crate::plaque::TissueClass> {
    use crate::plaque::TissueClass;
    if hu_low >= t.calc_threshold {
        return Ok(TissueClass::Calcified);
    }
    Ok(if de_index(hu_low, hu_high)? < t.dei_threshold {
        TissueClass::LipidRich
    } else {
        TissueClass::Fibrotic
    })
}

/// DE classification of a region on the low-kV grid, sampling the high-kV scan
/// trilinearly at `T⁻¹(x)`.
pub fn de_composition(region: &PlaqueRegion, pair: &DePair, t: &DeThresholds) -> Result<DeComposition> {
    let mut counts = ClassCounts::default();
    let mut excluded = 0;
    for &idx in &region.voxels {
        let x = pair.low.center_of(idx);
        let low = pair.low.data()[idx] as f64;
        let Ok(high) = pair.high.sample_trilinear(pair.transform.apply_inverse(x)) else {
            excluded += 1;
            continue;
        };
        match de_classify(low, high, t) {
            Ok(c) => counts.add(c),
            Err(_) => excluded += 1,
        }
    }
    let vv = pair.low.voxel_volume();
    Ok(DeComposition {
        counts,
        lipid_rich_mm3: counts.lipid_rich as f64 * vv,
        fibrotic_mm3: counts.fibrotic as f64 * vv,
        calcified_mm3: counts.calcified as f64 * vv,
        excluded,
        thresholds: *t,
    })
}
