//! Voxel membership in shells around a centerline, by nearest-section polar coordinates.

use crate::centerline::Centerline;
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::volume::Volume;
use crate::wall::WallSurface;

/// Polar position of a point relative to its nearest section.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TubeCoords {
    /// Index of the nearest section center.
    pub section: usize,
    /// Section arclength plus the axial offset from the section plane.
    pub s: f64,
    /// Axial offset from the section plane (mm).
    pub axial: f64,
    pub r: f64,
    pub theta: f64,
}

/// Guards the arclength bound in [`TubeFrames::nearest`] against rounding.
const SKIP_MARGIN: f64 = 1e-9;

/// Section centers and frames of a wall surface laid along its centerline.
pub struct TubeFrames {
    pub centers: Vec<Vec3>,
    pub tangents: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub binormals: Vec<Vec3>,
    pub section_s: Vec<f64>,
}

impl TubeFrames {
    pub fn new(centerline: &Centerline, surface: &WallSurface) -> Self {
        let mut t = TubeFrames {
            centers: Vec::new(),
            tangents: Vec::new(),
            normals: Vec::new(),
            binormals: Vec::new(),
            section_s: surface.section_s.clone(),
        };
        for &s in &surface.section_s {
            let f = centerline.frame_at(s);
            let c = centerline.point_at(s);
            t.centers.push(c);
            t.tangents.push(f.tangent);
            t.normals.push(f.normal);
            t.binormals.push(f.binormal);
        }
        t
    }

    /// Nearest section center, ties to the lower index. `hint` seeds the search.
    ///
    /// Centers lie on the centerline, so two of them are never farther apart
    /// than their arclength difference. That bounds the distance of every later
    /// center from below and lets the scan skip those that cannot win.
    pub fn nearest(&self, p: Vec3, hint: usize) -> usize {
        let n = self.centers.len();
        let mut best = (geom::dist(p, self.centers[hint]), hint);
        let mut i = 0;
        while i < n {
            let d = geom::dist(p, self.centers[i]);
            if d < best.0 || (d == best.0 && i < best.1) {
                best = (d, i);
            }
            let target = self.section_s[i] + (d - best.0) - SKIP_MARGIN;
            i = (i + 1).max(self.section_s.partition_point(|s| *s < target));
        }
        best.1
    }

    /// Nearest section by exhaustive scan.
    pub fn nearest_exhaustive(&self, p: Vec3) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (k, c) in self.centers.iter().enumerate() {
            let d = geom::dist(p, *c);
            if d < best.0 {
                best = (d, k);
            }
        }
        best.1
    }

    pub fn coords_in(&self, p: Vec3, k: usize) -> TubeCoords {
        let d = geom::sub(p, self.centers[k]);
        let axial = geom::dot(d, self.tangents[k]);
        let x = geom::dot(d, self.normals[k]);
        let y = geom::dot(d, self.binormals[k]);
        TubeCoords {
            section: k,
            s: self.section_s[k] + axial,
            axial,
            r: x.hypot(y),
            theta: y.atan2(x),
        }
    }
}

/// Fail unless the surface spans `[start, end]`.
pub fn check_coverage(surface: &WallSurface, start: f64, end: f64) -> Result<()> {
    let (a, b) = surface.s_range();
    let tol = 1e-6;
    if start < a - tol || end > b + tol || !(start < end) {
        return Err(Error::Coverage {
            start,
            end,
            covered_start: a,
            covered_end: b,
        });
    }
    Ok(())
}

/// Linear indices (ascending) of voxels whose center satisfies
/// `s_range.0 ≤ s < s_range.1`, `|axial| ≤ step` and `member(coords)`.
///
/// `reach[k]` bounds the radius any member of section `k` may have.
pub fn collect_voxels(
    volume: &Volume,
    tube: &TubeFrames,
    step: f64,
    s_range: (f64, f64),
    reach: &[f64],
    member: impl Fn(&TubeCoords) -> bool,
) -> Vec<usize> {
    let mut out = Vec::new();
    // each voxel is classified once, by whichever section box reaches it first
    let mut seen = vec![0u64; volume.len().div_ceil(64)];
    let dims = volume.dims();
    let sp = volume.spacing();
    for k in 0..tube.centers.len() {
        let s_k = tube.section_s[k];
        if s_k + step < s_range.0 || s_k - step >= s_range.1 {
            continue;
        }
        let rad = reach[k] + step;
        let c = volume.world_to_voxel(tube.centers[k]);
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut empty = false;
        for a in 0..3 {
            let l = (c[a] - rad / sp[a]).ceil().max(0.0);
            let h = (c[a] + rad / sp[a]).floor().min(dims[a] as f64 - 1.0);
            if h < l {
                empty = true;
            }
            lo[a] = l as usize;
            hi[a] = h.max(0.0) as usize;
        }
        if empty {
            continue;
        }
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let p = volume.voxel_to_world([x as f64, y as f64, z as f64]);
                    if geom::dist(p, tube.centers[k]) > rad {
                        continue;
                    }
                    let idx = volume.index(x, y, z);
                    if seen[idx / 64] & (1 << (idx % 64)) != 0 {
                        continue;
                    }
                    seen[idx / 64] |= 1 << (idx % 64);
                    let j = tube.nearest(p, k);
                    if geom::dist(p, tube.centers[j]) > reach[j] + step {
                        continue;
                    }
                    let tc = tube.coords_in(p, j);
                    if tc.axial.abs() <= step && tc.s >= s_range.0 && tc.s < s_range.1 && member(&tc) {
                        out.push(idx);
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// Reference implementation of [`collect_voxels`]: every voxel, exhaustive nearest section.
pub fn collect_voxels_exhaustive(
    volume: &Volume,
    tube: &TubeFrames,
    step: f64,
    s_range: (f64, f64),
    member: impl Fn(&TubeCoords) -> bool,
) -> Vec<usize> {
    (0..volume.len())
        .filter(|&idx| {
            let p = volume.center_of(idx);
            let tc = tube.coords_in(p, tube.nearest_exhaustive(p));
            tc.axial.abs() <= step && tc.s >= s_range.0 && tc.s < s_range.1 && member(&tc)
        })
        .collect()
}
