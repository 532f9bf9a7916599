//! Single-seed ridge tracking in both directions along the vessel.

use std::collections::HashSet;

use super::path::{finish_polyline, ExtractionParams, NEIGHBORS_26};
use super::Extraction;
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::vesselness::{vesselness_with, VesselnessField, VoxelBox};
use crate::volume::Volume;

#[derive(Clone, Debug, PartialEq)]
pub struct TrackingParams {
    pub extraction: ExtractionParams,
    /// Vesselness below which a step counts as leaving the vessel.
    pub min_vesselness: f64,
    /// Consecutive weak steps that terminate a direction.
    pub max_weak_steps: usize,
    pub max_length_mm: f64,
    /// Half-angle of the forward search cone.
    pub cone_deg: f64,
    /// Number of recent steps averaged into the running direction.
    pub direction_memory: usize,
}

impl Default for TrackingParams {
    fn default() -> Self {
        Self {
            extraction: ExtractionParams::default(),
            min_vesselness: 0.05,
            max_weak_steps: 10,
            max_length_mm: 300.0,
            cone_deg: 60.0,
            direction_memory: 4,
        }
    }
}

pub fn extract_centerline_single_seed(
    volume: &Volume,
    seed: Vec3,
    mask: Option<VoxelBox>,
    params: &TrackingParams,
) -> Result<Extraction> {
    volume.nearest_voxel(seed).ok_or(Error::OutOfBounds(seed))?;
    let field = vesselness_with(volume, &params.extraction.vesselness, mask)?;
    track_single_seed_with_field(&field, volume, seed, mask, params)
}

struct Tracker<'a> {
    field: &'a VesselnessField,
    volume: &'a Volume,
    region: VoxelBox,
    params: &'a TrackingParams,
    visited: HashSet<[usize; 3]>,
}

impl Tracker<'_> {
    fn step_vec(&self, from: [usize; 3], o: [i32; 3]) -> Option<([usize; 3], Vec3)> {
        let n = [
            from[0] as i64 + o[0] as i64,
            from[1] as i64 + o[1] as i64,
            from[2] as i64 + o[2] as i64,
        ];
        if n.iter().any(|&x| x < 0) {
            return None;
        }
        let n = [n[0] as usize, n[1] as usize, n[2] as usize];
        if !self.region.contains(n) || !(0..3).all(|a| n[a] < self.field.dims[a]) {
            return None;
        }
        let sp = self.volume.spacing();
        Some((n, [o[0] as f64 * sp[0], o[1] as f64 * sp[1], o[2] as f64 * sp[2]]))
    }

    /// Best unvisited neighbour inside the cone around `dir`.
    fn best_step(&self, at: [usize; 3], dir: Vec3) -> Option<([usize; 3], Vec3)> {
        let cos_cone = self.params.cone_deg.to_radians().cos();
        let mut best: Option<([usize; 3], Vec3, f64)> = None;
        for o in NEIGHBORS_26 {
            let Some((n, d)) = self.step_vec(at, o) else { continue };
            if self.visited.contains(&n) {
                continue;
            }
            let u = geom::normalize(d).unwrap();
            if geom::dot(u, dir) < cos_cone - 1e-12 {
                continue;
            }
            let v = self.field.at(n);
            if best.is_none_or(|b| v > b.2) {
                best = Some((n, d, v));
            }
        }
        best.map(|(n, d, _)| (n, d))
    }

    /// Follow the ridge from `start` along `dir`; returns voxels excluding `start`.
    fn trace(&mut self, start: [usize; 3], dir: Vec3, budget: f64) -> (Vec<[usize; 3]>, f64) {
        let mut out = Vec::new();
        let mut lengths = Vec::new();
        let mut recent: Vec<Vec3> = vec![dir];
        let mut dir = dir;
        let mut cur = start;
        let mut weak = 0usize;
        let mut length = 0.0;
        while let Some((n, d)) = self.best_step(cur, dir) {
            let step = geom::norm(d);
            if length + step > budget {
                break;
            }
            length += step;
            self.visited.insert(n);
            out.push(n);
            lengths.push(step);
            if self.field.at(n) < self.params.min_vesselness {
                weak += 1;
                if weak >= self.params.max_weak_steps {
                    break;
                }
            } else {
                weak = 0;
            }
            recent.push(geom::normalize(d).unwrap());
            if recent.len() > self.params.direction_memory {
                recent.remove(0);
            }
            let sum = recent.iter().fold([0.0; 3], |a, r| geom::add(a, *r));
            dir = geom::normalize(sum).unwrap_or(dir);
            cur = n;
        }
        // drop the trailing weak steps
        for _ in 0..weak {
            out.pop();
            length -= lengths.pop().unwrap();
        }
        (out, length)
    }
}

/// Tracking on a precomputed vesselness field.
pub fn track_single_seed_with_field(
    field: &VesselnessField,
    volume: &Volume,
    seed: Vec3,
    mask: Option<VoxelBox>,
    params: &TrackingParams,
) -> Result<Extraction> {
    let s = volume.nearest_voxel(seed).ok_or(Error::OutOfBounds(seed))?;
    let region = mask.unwrap_or(VoxelBox::full(field.dims));
    if !region.contains(s) {
        return Err(Error::Parameter("seed lies outside the search mask".into()));
    }
    let v0 = field.at(s);
    if v0 < params.min_vesselness {
        return Err(Error::NoVesselAtSeed(v0));
    }
    let mut tracker = Tracker {
        field,
        volume,
        region,
        params,
        visited: HashSet::from([s]),
    };
    // initial direction: strongest neighbour, taken as a line through the seed
    let mut best: Option<(Vec3, f64)> = None;
    for o in NEIGHBORS_26 {
        if let Some((n, d)) = tracker.step_vec(s, o) {
            let v = field.at(n);
            if best.is_none_or(|b| v > b.1) {
                best = Some((d, v));
            }
        }
    }
    let Some((d0, _)) = best else {
        return Err(Error::Degenerate("seed has no neighbours in the search region".into()));
    };
    let dir = geom::normalize(d0).unwrap();
    let (fwd, len_f) = tracker.trace(s, dir, params.max_length_mm);
    let (back, _) = tracker.trace(s, geom::scale(dir, -1.0), params.max_length_mm - len_f);
    let voxels: Vec<[usize; 3]> = back
        .into_iter()
        .rev()
        .chain(std::iter::once(s))
        .chain(fwd)
        .collect();
    let pts: Vec<Vec3> = voxels
        .iter()
        .map(|c| volume.voxel_to_world([c[0] as f64, c[1] as f64, c[2] as f64]))
        .collect();
    let centerline = finish_polyline(
        field,
        &pts,
        params.extraction.smoothing_window,
        params.extraction.resample_step,
    )?;
    let mut lo = voxels[0];
    let mut hi = voxels[0];
    for c in &voxels {
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    Ok(Extraction {
        centerline,
        warnings: Vec::new(),
        path_cost: 0.0,
        visited: voxels.len(),
        visited_box: VoxelBox {
            lo,
            hi: [hi[0] + 1, hi[1] + 1, hi[2] + 1],
        },
    })
}
