//! Perivascular fat regions of interest and their attenuation statistics.

use serde::{Deserialize, Serialize};

use crate::centerline::Centerline;
use crate::error::{Error, Result};
use crate::plaque::HuHistogram;
use crate::tube::{check_coverage, collect_voxels, TubeFrames};
use crate::volume::Volume;
use crate::wall::{WallKind, WallSurface};

/// HU interval counted as fat, inclusive.
pub const FAT_WINDOW: [f64; 2] = [-190.0, -30.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RoiWidth {
    /// Fixed radial width in mm.
    Manual { mm: f64 },
    /// Mean diameter of the base wall at each section.
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FatRoi {
    pub centerline_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch_label: Option<String>,
    pub base: WallKind,
    pub width: RoiWidth,
    pub start_s: f64,
    pub end_s: f64,
    /// Ascending linear voxel indices.
    pub voxels: Vec<usize>,
    pub voxel_volume: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FatRoi {
    pub fn volume_mm3(&self) -> f64 {
        self.voxels.len() as f64 * self.voxel_volume
    }
}

/// Voxels with `wall(θ) < r ≤ wall(θ) + w` in the polar frame of their nearest
/// section and `s_range.0 ≤ s < s_range.1`.
pub fn build_fat_roi(
    v: &Volume,
    c: &Centerline,
    wall: &WallSurface,
    width: RoiWidth,
    s_range: (f64, f64),
) -> Result<FatRoi> {
    wall.check_shape()?;
    if let RoiWidth::Manual { mm } = width {
        if !(mm > 0.0) {
            return Err(Error::Parameter(format!("ROI width must be positive, got {mm}")));
        }
    }
    check_coverage(wall, s_range.0, s_range.1)?;
    let widths: Vec<f64> = match width {
        RoiWidth::Manual { mm } => vec![mm; wall.n_sections()],
        RoiWidth::Auto => wall
            .radii
            .iter()
            .map(|r| 2.0 * r.iter().sum::<f64>() / r.len() as f64)
            .collect(),
    };
    let reach: Vec<f64> = wall
        .radii
        .iter()
        .zip(&widths)
        .map(|(r, w)| r.iter().cloned().fold(0.0, f64::max) + w)
        .collect();
    let tube = TubeFrames::new(c, wall);
    let voxels = collect_voxels(v, &tube, wall.step_s, s_range, &reach, |tc| {
        let rw = wall.radius_at(tc.section, tc.theta);
        rw < tc.r && tc.r <= rw + widths[tc.section]
    });
    Ok(FatRoi {
        centerline_id: c.id().to_string(),
        branch_label: c.branch_label().map(str::to_string),
        base: wall.kind,
        width,
        start_s: s_range.0,
        end_s: s_range.1,
        voxels,
        voxel_volume: v.voxel_volume(),
        warnings: Vec::new(),
    })
}

/// Standard arclength interval from the ostium for a main branch label.
pub fn literature_range(label: &str) -> Option<(f64, f64)> {
    match label.to_ascii_uppercase().as_str() {
        "RCA" => Some((10.0, 50.0)),
        "LAD" | "LCX" => Some((0.0, 40.0)),
        _ => None,
    }
}

/// A labeled branch with its outer wall.
#[derive(Clone, Copy)]
pub struct BranchWalls<'a> {
    pub centerline: &'a Centerline,
    pub outer: &'a WallSurface,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AutoRois {
    pub rois: Vec<FatRoi>,
    pub notices: Vec<String>,
}

/// One auto-width, outer-based ROI per labeled main branch over its standard
/// interval, truncated to the segmented extent.
pub fn auto_branch_rois(v: &Volume, branches: &[BranchWalls]) -> Result<AutoRois> {
    let mut out = AutoRois::default();
    for name in ["RCA", "LAD", "LCx"] {
        let found = branches.iter().find(|b| {
            b.centerline
                .branch_label()
                .is_some_and(|l| l.eq_ignore_ascii_case(name))
        });
        let Some(b) = found else {
            out.notices.push(format!("no {name} branch labeled; skipped"));
            continue;
        };
        let (start, end) = literature_range(name).expect("main branch");
        if b.outer.kind != WallKind::Outer {
            return Err(Error::Parameter(format!("{name}: automatic ROIs need the outer wall")));
        }
        let (lo, hi) = b.outer.s_range();
        let (a, z) = (start.max(lo), end.min(hi).min(b.centerline.total_length()));
        if !(a < z) {
            out.notices.push(format!("{name} wall ends before {start} mm; skipped"));
            continue;
        }
        let mut roi = build_fat_roi(v, b.centerline, b.outer, RoiWidth::Auto, (a, z))?;
        if a > start || z < end {
            roi.warnings.push(format!(
                "{name} ROI truncated from [{start}, {end}] to [{a:.2}, {z:.2}] mm"
            ));
        }
        out.rois.push(roi);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FatStats {
    pub window: [f64; 2],
    /// Mean HU of in-window voxels; absent when there are none.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_hu: Option<f64>,
    pub total_voxels: u64,
    pub in_window_voxels: u64,
    pub roi_volume_mm3: f64,
    pub histogram: HuHistogram,
}

pub fn fat_stats(roi: &FatRoi, v: &Volume) -> FatStats {
    let mut histogram = HuHistogram::default();
    let (mut n, mut sum) = (0u64, 0i64);
    for &i in &roi.voxels {
        let hu = v.data()[i];
        histogram.add(hu as i32);
        if (FAT_WINDOW[0]..=FAT_WINDOW[1]).contains(&(hu as f64)) {
            n += 1;
            sum += hu as i64;
        }
    }
    FatStats {
        window: FAT_WINDOW,
        mean_hu: (n > 0).then(|| sum as f64 / n as f64),
        total_voxels: roi.voxels.len() as u64,
        in_window_voxels: n,
        roi_volume_mm3: roi.volume_mm3(),
        histogram,
    }
}
