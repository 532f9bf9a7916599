//! Vessel centerlines: geometry, rotation-minimizing frames, markers and edits.

mod path;
mod track;

pub use path::{
    edge_cost, extract_centerline_two_seeds, extract_two_seeds_with_field, minimal_path, Extraction,
    ExtractionParams, PathResult, COST_EPSILON, NEIGHBORS_26,
};
pub use track::{
    extract_centerline_single_seed, track_single_seed_with_field, TrackingParams,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

/// Orthonormal triad attached to a centerline point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub tangent: Vec3,
    pub normal: Vec3,
    pub binormal: Vec3,
}

/// Arclength-parameterized 3D polyline with rotation-minimizing frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CenterlineData", into = "CenterlineData")]
pub struct Centerline {
    id: String,
    branch_label: Option<String>,
    points: Vec<Vec3>,
    arclength: Vec<f64>,
    frames: Vec<Frame>,
}

/// Serialized form: frames and arclength are derived on load.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CenterlineData {
    pub id: String,
    #[serde(default)]
    pub branch_label: Option<String>,
    pub points: Vec<Vec3>,
}

impl TryFrom<CenterlineData> for Centerline {
    type Error = Error;

    fn try_from(d: CenterlineData) -> Result<Self> {
        Centerline::new(d.id, d.points, d.branch_label)
    }
}

impl From<Centerline> for CenterlineData {
    fn from(c: Centerline) -> Self {
        CenterlineData {
            id: c.id,
            branch_label: c.branch_label,
            points: c.points,
        }
    }
}

impl Centerline {
    /// Build a centerline; fails on fewer than two points or repeated consecutive points.
    pub fn new(id: impl Into<String>, points: Vec<Vec3>, branch_label: Option<String>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Degenerate(format!(
                "a centerline needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Degenerate("centerline points must be finite".into()));
        }
        let mut arclength = Vec::with_capacity(points.len());
        arclength.push(0.0);
        for w in points.windows(2) {
            let d = geom::dist(w[0], w[1]);
            if !(d > 1e-9) {
                return Err(Error::Degenerate("consecutive centerline points coincide".into()));
            }
            arclength.push(arclength.last().unwrap() + d);
        }
        let frames = compute_frames(&points);
        Ok(Self {
            id: id.into(),
            branch_label,
            points,
            arclength,
            frames,
        })
    }

    /// Like [`Centerline::new`] but silently drops repeated consecutive points.
    pub fn from_points_dedup(id: impl Into<String>, points: Vec<Vec3>, branch_label: Option<String>) -> Result<Self> {
        let mut clean: Vec<Vec3> = Vec::with_capacity(points.len());
        for p in points {
            if clean.last().is_none_or(|q| geom::dist(*q, p) > 1e-9) {
                clean.push(p);
            }
        }
        Self::new(id, clean, branch_label)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn branch_label(&self) -> Option<&str> {
        self.branch_label.as_deref()
    }

    pub fn with_label(mut self, label: Option<String>) -> Self {
        self.branch_label = label;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn arclength(&self) -> &[f64] {
        &self.arclength
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        *self.arclength.last().unwrap()
    }

    /// Segment index and fraction for arclength `s` (clamped to the curve).
    pub fn locate(&self, s: f64) -> (usize, f64) {
        let s = s.clamp(0.0, self.total_length());
        let i = match self.arclength.binary_search_by(|a| a.total_cmp(&s)) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
        .min(self.points.len() - 2);
        let seg = self.arclength[i + 1] - self.arclength[i];
        (i, ((s - self.arclength[i]) / seg).clamp(0.0, 1.0))
    }

    pub fn point_at(&self, s: f64) -> Vec3 {
        let (i, t) = self.locate(s);
        geom::lerp(self.points[i], self.points[i + 1], t)
    }

    /// Frame at arclength `s`, blended between the neighbouring point frames
    /// and re-orthonormalized.
    pub fn frame_at(&self, s: f64) -> Frame {
        let (i, t) = self.locate(s);
        let (a, b) = (self.frames[i], self.frames[i + 1]);
        let tangent = geom::normalize(geom::lerp(a.tangent, b.tangent, t)).unwrap_or(a.tangent);
        let n = geom::lerp(a.normal, b.normal, t);
        let n = geom::axpy(n, -geom::dot(n, tangent), tangent);
        let normal = geom::normalize(n).unwrap_or_else(|| geom::any_perpendicular(tangent));
        Frame {
            tangent,
            normal,
            binormal: geom::cross(tangent, normal),
        }
    }

    /// Closest point on the polyline: `(arclength, distance)`.
    pub fn project(&self, p: Vec3) -> (f64, f64) {
        let mut best = (0.0, f64::INFINITY);
        for (i, w) in self.points.windows(2).enumerate() {
            let (d, t) = geom::point_segment_distance(p, w[0], w[1]);
            if d < best.1 {
                best = (self.arclength[i] + t * (self.arclength[i + 1] - self.arclength[i]), d);
            }
        }
        best
    }

    /// Apply an edit, producing a new centerline with recomputed arclength and frames.
    pub fn edit(&self, edit: &CenterlineEdit) -> Result<Centerline> {
        let mut pts = self.points.clone();
        match edit {
            CenterlineEdit::MovePoint { index, point } => {
                let slot = pts
                    .get_mut(*index)
                    .ok_or_else(|| Error::Parameter(format!("point index {index} out of range")))?;
                *slot = *point;
            }
            CenterlineEdit::Append { point } => pts.push(*point),
            CenterlineEdit::DeleteRange { start, end } => {
                if start > end || *end >= pts.len() {
                    return Err(Error::Parameter(format!(
                        "delete range {start}..={end} invalid for {} points",
                        pts.len()
                    )));
                }
                pts.drain(*start..=*end);
            }
            CenterlineEdit::DrawManual { points } => {
                let distinct = points.windows(2).any(|w| geom::dist(w[0], w[1]) > 1e-9);
                if points.len() < 2 || !distinct {
                    return Err(Error::Degenerate("a manual centerline needs at least 2 distinct points".into()));
                }
                pts = points.clone();
            }
        }
        Centerline::new(self.id.clone(), pts, self.branch_label.clone())
    }
}

/// Interactive centerline corrections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum CenterlineEdit {
    MovePoint { index: usize, point: Vec3 },
    Append { point: Vec3 },
    /// Remove points `start..=end`.
    DeleteRange { start: usize, end: usize },
    DrawManual { points: Vec<Vec3> },
}

/// Unit tangents from neighbouring chords.
fn tangents(points: &[Vec3]) -> Vec<Vec3> {
    let n = points.len();
    (0..n)
        .map(|i| {
            let fwd = geom::sub(points[(i + 1).min(n - 1)], points[i]);
            let back = geom::sub(points[i], points[i.saturating_sub(1)]);
            let central = geom::add(fwd, back);
            let chord = if i + 1 < n { fwd } else { back };
            match geom::normalize(central) {
                Some(t) if geom::dot(t, chord) > 0.0 => t,
                _ => geom::normalize(chord).expect("distinct consecutive points"),
            }
        })
        .collect()
}

/// Rotation-minimizing frames by the double-reflection method.
///
/// The first normal follows the first noticeable bend of the curve, so planar
/// curves get a binormal equal to the plane normal; straight curves fall back
/// to an arbitrary perpendicular.
pub fn compute_frames(points: &[Vec3]) -> Vec<Frame> {
    let ts = tangents(points);
    let t0 = ts[0];
    let mut normal = None;
    for w in ts.windows(2) {
        let bend = geom::sub(w[1], w[0]);
        let perp = geom::axpy(bend, -geom::dot(bend, t0), t0);
        if geom::norm(perp) > 1e-6 {
            normal = geom::normalize(perp);
            break;
        }
    }
    let mut r = normal.unwrap_or_else(|| geom::any_perpendicular(t0));
    let mut frames = Vec::with_capacity(points.len());
    frames.push(Frame {
        tangent: t0,
        normal: r,
        binormal: geom::cross(t0, r),
    });
    for i in 0..points.len() - 1 {
        let v1 = geom::sub(points[i + 1], points[i]);
        let c1 = geom::dot(v1, v1);
        let r_l = geom::axpy(r, -2.0 / c1 * geom::dot(v1, r), v1);
        let t_l = geom::axpy(ts[i], -2.0 / c1 * geom::dot(v1, ts[i]), v1);
        let v2 = geom::sub(ts[i + 1], t_l);
        let c2 = geom::dot(v2, v2);
        let mut next = if c2 > 1e-300 {
            geom::axpy(r_l, -2.0 / c2 * geom::dot(v2, r_l), v2)
        } else {
            r_l
        };
        let t = ts[i + 1];
        next = geom::axpy(next, -geom::dot(next, t), t);
        r = geom::normalize(next).unwrap_or_else(|| geom::any_perpendicular(t));
        frames.push(Frame {
            tangent: t,
            normal: r,
            binormal: geom::cross(t, r),
        });
    }
    frames
}

/// Which end of the selected vessel section a marker denotes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerEnd {
    Proximal,
    Distal,
}

/// Minimum gap kept between the two markers when one is dragged onto the other.
pub const MARKER_GAP: f64 = 0.5;

/// Start and end of the vessel section under analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionMarkers {
    pub centerline_id: String,
    pub proximal_s: f64,
    pub distal_s: f64,
}

impl SectionMarkers {
    pub fn new(centerline: &Centerline, proximal_s: f64, distal_s: f64) -> Result<Self> {
        let total = centerline.total_length();
        if !(0.0 <= proximal_s && proximal_s < distal_s && distal_s <= total + 1e-9) {
            return Err(Error::Parameter(format!(
                "markers must satisfy 0 <= {proximal_s} < {distal_s} <= {total}"
            )));
        }
        Ok(Self {
            centerline_id: centerline.id().to_string(),
            proximal_s,
            distal_s: distal_s.min(total),
        })
    }

    /// Markers spanning the whole centerline.
    pub fn full(centerline: &Centerline) -> Self {
        Self {
            centerline_id: centerline.id().to_string(),
            proximal_s: 0.0,
            distal_s: centerline.total_length(),
        }
    }

    pub fn length(&self) -> f64 {
        self.distal_s - self.proximal_s
    }

    /// Shift one marker by `delta_s`, clamping to `[0, total]` and keeping
    /// [`MARKER_GAP`] to the other marker. Never fails.
    pub fn shift(&self, which: MarkerEnd, delta_s: f64, total: f64) -> Self {
        let mut m = self.clone();
        match which {
            MarkerEnd::Proximal => {
                let hi = (m.distal_s - MARKER_GAP).max(0.0);
                m.proximal_s = (m.proximal_s + delta_s).min(hi).max(0.0);
            }
            MarkerEnd::Distal => {
                let lo = (m.proximal_s + MARKER_GAP).min(total);
                m.distal_s = (m.distal_s + delta_s).max(lo).min(total);
            }
        }
        m
    }

    /// Carry markers over to an edited centerline by projecting their old world
    /// positions onto the new curve.
    pub fn reproject(&self, old: &Centerline, new: &Centerline) -> Self {
        let (p, _) = new.project(old.point_at(self.proximal_s));
        let (d, _) = new.project(old.point_at(self.distal_s));
        let total = new.total_length();
        let (mut p, mut d) = if p <= d { (p, d) } else { (d, p) };
        if d - p < MARKER_GAP {
            d = (p + MARKER_GAP).min(total);
            p = (d - MARKER_GAP).max(0.0);
        }
        Self {
            centerline_id: new.id().to_string(),
            proximal_s: p,
            distal_s: d,
        }
    }
}

/// Moving average with a shrinking symmetric window at the ends (endpoints fixed).
pub fn smooth_polyline(points: &[Vec3], window: usize) -> Vec<Vec3> {
    let half = window / 2;
    let n = points.len();
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let mut acc = [0.0; 3];
            for p in &points[i - h..=i + h] {
                acc = geom::add(acc, *p);
            }
            geom::scale(acc, 1.0 / (2 * h + 1) as f64)
        })
        .collect()
}

/// Resample a polyline at uniform arclength spacing close to `step`.
pub fn resample_polyline(points: &[Vec3], step: f64) -> Vec<Vec3> {
    let mut cum = vec![0.0];
    for w in points.windows(2) {
        cum.push(cum.last().unwrap() + geom::dist(w[0], w[1]));
    }
    let total = *cum.last().unwrap();
    if total <= 0.0 {
        return points[..1].to_vec();
    }
    let n = ((total / step).round() as usize).max(1);
    let mut out = Vec::with_capacity(n + 1);
    let mut seg = 0;
    for k in 0..=n {
        let s = total * k as f64 / n as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(geom::lerp(points[seg], points[seg + 1], t));
    }
    out
}
