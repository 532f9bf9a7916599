//! The four-step workflow: heart isolation, centerline extraction,
//! segmentation and plaque analysis.

use std::fmt;

use coroplaq_core::vesselness::VoxelBox;
use coroplaq_core::wall::WallKind;
use coroplaq_core::{Error, Volume};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::project::CropBox;
use crate::session::{Command, Session};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStep {
    HeartIsolation,
    CenterlineExtraction,
    Segmentation,
    PlaqueAnalysis,
}

impl PipelineStep {
    pub fn number(self) -> u8 {
        match self {
            PipelineStep::HeartIsolation => 1,
            PipelineStep::CenterlineExtraction => 2,
            PipelineStep::Segmentation => 3,
            PipelineStep::PlaqueAnalysis => 4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            PipelineStep::HeartIsolation => "heart_isolation",
            PipelineStep::CenterlineExtraction => "centerline_extraction",
            PipelineStep::Segmentation => "segmentation",
            PipelineStep::PlaqueAnalysis => "plaque_analysis",
        }
    }
}

impl fmt::Display for PipelineStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.number(), self.name())
    }
}

/// Voxels whose centers lie in `crop`, or the whole grid without one.
pub fn heart_crop(v: &Volume, crop: Option<&CropBox>) -> Result<VoxelBox> {
    let dims = v.dims();
    let Some(b) = crop else {
        return Ok(VoxelBox::full(dims));
    };
    if (0..3).any(|a| !(b.min[a] < b.max[a])) {
        return Err(Error::Parameter(format!("crop box {:?}..{:?} is empty", b.min, b.max)).into());
    }
    let (lo_w, hi_w) = v.domain_bounds();
    let tol = 1e-6;
    if (0..3).any(|a| b.min[a] < lo_w[a] - tol || b.max[a] > hi_w[a] + tol) {
        return Err(Error::Parameter(format!(
            "crop box {:?}..{:?} extends outside the volume {:?}..{:?}",
            b.min, b.max, lo_w, hi_w
        ))
        .into());
    }
    let (a, z) = (v.world_to_voxel(b.min), v.world_to_voxel(b.max));
    let mut out = VoxelBox::full(dims);
    for k in 0..3 {
        out.lo[k] = (a[k] - 1e-9).ceil().max(0.0) as usize;
        out.hi[k] = ((z[k] + 1e-9).floor() + 1.0).clamp(0.0, dims[k] as f64) as usize;
    }
    if out.is_empty() {
        return Err(Error::Parameter(format!("crop box {:?}..{:?} contains no voxel center", b.min, b.max)).into());
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Outer wall edge threshold; keeps an existing outer wall's when absent.
    #[serde(default)]
    pub outer_threshold: Option<f64>,
    /// Branch label for a newly extracted centerline.
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PipelineSummary {
    pub centerlines: Vec<String>,
    pub lesions: Vec<String>,
    /// Commands issued by this run, in order.
    pub actions: Vec<String>,
}

fn at(step: PipelineStep) -> impl Fn(ServiceError) -> ServiceError {
    move |e| ServiceError::Pipeline {
        step,
        source: Box::new(e),
    }
}

/// Bring every artifact up to date. Steps whose outputs are present and fresh
/// are skipped, so a re-run on unchanged input issues no commands.
pub fn run_pipeline(s: &mut Session, config: &PipelineConfig) -> Result<PipelineSummary> {
    let mut sum = PipelineSummary::default();
    let run = |s: &mut Session, step: PipelineStep, cmd: Command, sum: &mut PipelineSummary| {
        sum.actions.push(cmd.action().to_string());
        s.apply(cmd).map_err(at(step))
    };

    let step = PipelineStep::HeartIsolation;
    s.volume().map_err(at(step))?;
    if s.project().mask.is_none() {
        let crop = s.project().crop.clone();
        run(s, step, Command::IsolateHeart { crop }, &mut sum)?;
    }

    let step = PipelineStep::CenterlineExtraction;
    let p = s.project();
    let reuse = p
        .centerlines
        .iter()
        .find(|(_, e)| e.seeds == p.seeds)
        .map(|(cid, _)| cid.clone());
    let targets: Vec<String> = if p.seeds.is_empty() {
        if p.centerlines.is_empty() {
            return Err(at(step)(ServiceError::MissingSeeds));
        }
        p.centerlines.keys().cloned().collect()
    } else if let Some(cid) = reuse {
        vec![cid]
    } else {
        let cmd = Command::ExtractCenterline {
            seeds: None,
            label: config.label.clone(),
            target: None,
        };
        run(s, step, cmd, &mut sum)?.entities
    };

    let step = PipelineStep::Segmentation;
    for cid in &targets {
        let p = s.project();
        let fresh = |kind| p.surface_id(cid, kind).is_some_and(|sid| !p.surfaces[&sid].stale);
        if !fresh(WallKind::Inner) {
            run(s, step, Command::SegmentInner { centerline_id: cid.clone() }, &mut sum)?;
        }
        let p = s.project();
        let outer = p.surface_id(cid, WallKind::Outer).map(|sid| &p.surfaces[&sid]);
        let redo = match outer {
            None => true,
            Some(o) => o.stale || config.outer_threshold.is_some_and(|t| o.threshold != Some(t)),
        };
        if redo {
            let threshold = config.outer_threshold.or(outer.and_then(|o| o.threshold));
            let cmd = Command::SegmentOuter {
                centerline_id: cid.clone(),
                threshold,
            };
            run(s, step, cmd, &mut sum)?;
        }
    }

    let step = PipelineStep::PlaqueAnalysis;
    for cid in &targets {
        let p = s.project();
        let inner = &p.surfaces[&p.surface_id(cid, WallKind::Inner).expect("segmented above")];
        let (ps, ds) = p
            .markers
            .get(cid)
            .map(|m| (m.proximal_s, m.distal_s))
            .unwrap_or_else(|| inner.surface.s_range());
        let existing = p
            .lesions
            .iter()
            .find(|(_, l)| l.centerline_id == *cid && l.markers.proximal_s == ps && l.markers.distal_s == ds);
        let lid = match existing {
            Some((lid, l)) if !l.stale => lid.clone(),
            Some((lid, _)) => {
                let lid = lid.clone();
                run(s, step, Command::RecomputeLesion { lesion_id: lid.clone() }, &mut sum)?;
                lid
            }
            None => {
                let cmd = Command::CreateLesion {
                    centerline_id: cid.clone(),
                    proximal_s: None,
                    distal_s: None,
                };
                run(s, step, cmd, &mut sum)?.entities.remove(0)
            }
        };
        sum.lesions.push(lid);
    }
    sum.centerlines = targets;
    Ok(sum)
}
