//! Two-seed minimal-path extraction on the vesselness cost field.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{resample_polyline, smooth_polyline, Centerline};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::vesselness::{vesselness_with, VesselnessField, VesselnessParams, VoxelBox};
use crate::volume::Volume;

/// Keeps edge costs finite where vesselness vanishes.
pub const COST_EPSILON: f64 = 1e-3;

/// The 26-neighbourhood offsets in a fixed order.
pub const NEIGHBORS_26: [[i32; 3]; 26] = {
    let mut out = [[0i32; 3]; 26];
    let mut n = 0;
    let mut dz = -1;
    while dz <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dx = -1;
            while dx <= 1 {
                if !(dx == 0 && dy == 0 && dz == 0) {
                    out[n] = [dx, dy, dz];
                    n += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
};

/// Cost of stepping `step_mm` between voxels with vesselness `va` and `vb`.
#[inline]
pub fn edge_cost(step_mm: f64, va: f64, vb: f64) -> f64 {
    step_mm / (0.5 * (va + vb) + COST_EPSILON)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathResult {
    /// Voxel path from the first seed to the second, inclusive.
    pub voxels: Vec<[usize; 3]>,
    pub cost: f64,
    /// Number of voxels settled by the search.
    pub visited: usize,
    /// Bounding box of all settled voxels.
    pub visited_box: VoxelBox,
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    cost: f64,
    idx: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over the 26-connected voxel graph, optionally restricted to `mask`.
pub fn minimal_path(
    field: &VesselnessField,
    from: [usize; 3],
    to: [usize; 3],
    mask: Option<&VoxelBox>,
) -> Result<PathResult> {
    let dims = field.dims;
    let region = mask.copied().unwrap_or(VoxelBox::full(dims));
    for s in [from, to] {
        if !(0..3).all(|a| s[a] < dims[a]) {
            return Err(Error::Parameter(format!("seed voxel {s:?} outside the volume")));
        }
        if !region.contains(s) {
            return Err(Error::Parameter(format!("seed voxel {s:?} outside the search mask")));
        }
    }
    let sp = field.spacing;
    let steps: Vec<f64> = NEIGHBORS_26
        .iter()
        .map(|o| {
            let d = [o[0] as f64 * sp[0], o[1] as f64 * sp[1], o[2] as f64 * sp[2]];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
        })
        .collect();
    let n = dims[0] * dims[1] * dims[2];
    let mut dist = vec![f64::INFINITY; n];
    // neighbour slot the node was reached from, 255 = none
    let mut via = vec![u8::MAX; n];
    let mut done = vec![false; n];
    let start = field.index(from);
    let goal = field.index(to);
    dist[start] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Entry { cost: 0.0, idx: start });
    let mut visited = 0usize;
    let mut lo = from;
    let mut hi = from;
    let coords = |idx: usize| {
        [idx % dims[0], (idx / dims[0]) % dims[1], idx / (dims[0] * dims[1])]
    };
    while let Some(Entry { cost, idx }) = heap.pop() {
        if done[idx] {
            continue;
        }
        done[idx] = true;
        visited += 1;
        let c = coords(idx);
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
        if idx == goal {
            break;
        }
        let vc = field.values[idx] as f64;
        for (slot, o) in NEIGHBORS_26.iter().enumerate() {
            let nc = [
                c[0] as i64 + o[0] as i64,
                c[1] as i64 + o[1] as i64,
                c[2] as i64 + o[2] as i64,
            ];
            if nc.iter().any(|&x| x < 0) {
                continue;
            }
            let nc = [nc[0] as usize, nc[1] as usize, nc[2] as usize];
            if !region.contains(nc) {
                continue;
            }
            let ni = field.index(nc);
            if done[ni] {
                continue;
            }
            let nd = cost + edge_cost(steps[slot], vc, field.values[ni] as f64);
            if nd < dist[ni] {
                dist[ni] = nd;
                via[ni] = slot as u8;
                heap.push(Entry { cost: nd, idx: ni });
            }
        }
    }
    if !done[goal] {
        return Err(Error::NoPath);
    }
    let mut voxels = vec![to];
    let mut cur = goal;
    while cur != start {
        let o = NEIGHBORS_26[via[cur] as usize];
        let c = coords(cur);
        let p = [
            (c[0] as i64 - o[0] as i64) as usize,
            (c[1] as i64 - o[1] as i64) as usize,
            (c[2] as i64 - o[2] as i64) as usize,
        ];
        voxels.push(p);
        cur = field.index(p);
    }
    voxels.reverse();
    Ok(PathResult {
        voxels,
        cost: dist[goal],
        visited,
        visited_box: VoxelBox {
            lo,
            hi: [hi[0] + 1, hi[1] + 1, hi[2] + 1],
        },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractionParams {
    pub vesselness: VesselnessParams,
    pub resample_step: f64,
    pub smoothing_window: usize,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        Self {
            vesselness: VesselnessParams::default(),
            resample_step: 0.5,
            smoothing_window: 5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Extraction {
    pub centerline: Centerline,
    pub warnings: Vec<String>,
    pub path_cost: f64,
    pub visited: usize,
    pub visited_box: VoxelBox,
}

/// Compute vesselness (restricted to `mask` when given) and extract the
/// minimal path between two world-space seeds.
pub fn extract_centerline_two_seeds(
    volume: &Volume,
    seed_a: Vec3,
    seed_b: Vec3,
    mask: Option<VoxelBox>,
    params: &ExtractionParams,
) -> Result<Extraction> {
    check_seeds(volume, seed_a, seed_b)?;
    let field = vesselness_with(volume, &params.vesselness, mask)?;
    extract_two_seeds_with_field(&field, volume, seed_a, seed_b, mask, params)
}

fn check_seeds(volume: &Volume, a: Vec3, b: Vec3) -> Result<([usize; 3], [usize; 3])> {
    let va = volume.nearest_voxel(a).ok_or(Error::OutOfBounds(a))?;
    let vb = volume.nearest_voxel(b).ok_or(Error::OutOfBounds(b))?;
    if va == vb {
        return Err(Error::Degenerate("both seeds fall in the same voxel".into()));
    }
    Ok((va, vb))
}

/// Extraction on a precomputed vesselness field.
pub fn extract_two_seeds_with_field(
    field: &VesselnessField,
    volume: &Volume,
    seed_a: Vec3,
    seed_b: Vec3,
    mask: Option<VoxelBox>,
    params: &ExtractionParams,
) -> Result<Extraction> {
    let (va, vb) = check_seeds(volume, seed_a, seed_b)?;
    let mut warnings = Vec::new();
    for (name, v) in [("seed_a", va), ("seed_b", vb)] {
        if field.at(v) <= 0.0 {
            warnings.push(format!("{name} lies at zero vesselness"));
        }
    }
    let path = minimal_path(field, va, vb, mask.as_ref())?;
    let pts: Vec<Vec3> = path
        .voxels
        .iter()
        .map(|c| volume.voxel_to_world([c[0] as f64, c[1] as f64, c[2] as f64]))
        .collect();
    let centerline = finish_polyline(field, &pts, params.smoothing_window, params.resample_step)?;
    Ok(Extraction {
        centerline,
        warnings,
        path_cost: path.cost,
        visited: path.visited,
        visited_box: path.visited_box,
    })
}

/// Smooth, resample and recenter a voxel path.
pub(crate) fn finish_polyline(field: &VesselnessField, pts: &[Vec3], window: usize, step: f64) -> Result<Centerline> {
    if pts.len() < 2 {
        return Err(Error::Degenerate("path has fewer than 2 voxels".into()));
    }
    let smooth = resample_polyline(&smooth_polyline(pts, window), step);
    let centered = recenter(field, &smooth);
    Centerline::from_points_dedup("", resample_polyline(&centered, step), None)
}

const RECENTER_ITERATIONS: usize = 8;

/// Move each point to the vesselness centroid in its normal plane.
///
/// A voxel path sits on voxel centers, up to half a voxel diagonal off the true
/// axis. Mean shift of the interpolated vesselness over a disk the size of the
/// local best scale converges to the axis of a symmetric tube. Points that
/// would move more than one voxel diagonal are left alone.
pub(crate) fn recenter(field: &VesselnessField, pts: &[Vec3]) -> Vec<Vec3> {
    let n = pts.len();
    if n < 2 {
        return pts.to_vec();
    }
    let sp_min = field.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
    let sp_max = field.spacing.iter().cloned().fold(0.0, f64::max);
    let h = sp_min / 2.0;
    let max_shift = 3f64.sqrt() * sp_max;
    (0..n)
        .map(|i| {
            let p = pts[i];
            let (a, b) = (pts[i.saturating_sub(1)], pts[(i + 1).min(n - 1)]);
            let Some(t) = geom::normalize(geom::sub(b, a)) else {
                return p;
            };
            let u = geom::any_perpendicular(t);
            let v = geom::cross(t, u);
            let radius = field
                .nearest_voxel(p)
                .map_or(0.0, |c| field.scale_at(c))
                .max(2.0 * sp_max);
            let k = (radius / h).floor() as i64;
            let mut q = p;
            for _ in 0..RECENTER_ITERATIONS {
                let (mut sw, mut su, mut sv) = (0.0, 0.0, 0.0);
                for j in -k..=k {
                    for l in -k..=k {
                        let (x, y) = (j as f64 * h, l as f64 * h);
                        if x * x + y * y > radius * radius {
                            continue;
                        }
                        let s = geom::add(q, geom::add(geom::scale(u, x), geom::scale(v, y)));
                        if let Some(w) = field.sample(s) {
                            sw += w;
                            su += w * x;
                            sv += w * y;
                        }
                    }
                }
                if sw <= 0.0 {
                    break;
                }
                let d = geom::add(geom::scale(u, su / sw), geom::scale(v, sv / sw));
                q = geom::add(q, d);
                if geom::norm(d) < 1e-3 {
                    break;
                }
            }
            if geom::dist(p, q) > max_shift {
                p
            } else {
                q
            }
        })
        .collect()
}
