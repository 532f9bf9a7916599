//! Commands, their transactional application and the in-memory session.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use coroplaq_core::centerline::{
    extract_two_seeds_with_field, track_single_seed_with_field, ExtractionParams, TrackingParams,
};
use coroplaq_core::dual_energy::{
    de_composition, detect_de_pair, load_meta, register_rigid, DeComposition, DePair, DeThresholds, PairSlot,
    RegistrationParams,
};
use coroplaq_core::geom::Vec3;
use coroplaq_core::perivascular::{auto_branch_rois, build_fat_roi, fat_stats, BranchWalls, FatRoi, RoiWidth};
use coroplaq_core::plaque::{
    build_plaque_region, composition_histogram, stenosis_and_remodeling, CompositionThresholds, LesionReport,
};
use coroplaq_core::reformat::{straighten, ReformatParams, StraightenedVolume};
use coroplaq_core::vesselness::{vesselness_with, VesselnessField, VesselnessParams, VoxelBox};
use coroplaq_core::wall::{
    apply_rbf_correction, enforce_order, segment_inner_wall, segment_outer_wall, EditConstraint, InnerParams,
    OuterParams, WallKind, WallSurface, DEFAULT_THRESHOLD,
};
use coroplaq_core::{load_volume, Centerline, CenterlineEdit, SectionMarkers, Volume};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::pipeline::heart_crop;
use crate::project::{
    CenterlineEntry, CropBox, FatRoiEntry, Lesion, PipelineEvent, Project, SurfaceEntry, VolumeRef,
};

/// A state change. Every applied command is logged and replaying the log
/// rebuilds the project.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Command {
    RegisterVolume {
        path: String,
    },
    RegisterDePair {
        path: String,
    },
    IsolateHeart {
        #[serde(default)]
        crop: Option<CropBox>,
    },
    SetSeeds {
        seeds: Vec<Vec3>,
    },
    ExtractCenterline {
        /// Falls back to the project seeds.
        #[serde(default)]
        seeds: Option<Vec<Vec3>>,
        #[serde(default)]
        label: Option<String>,
        /// Replace this centerline instead of adding one.
        #[serde(default)]
        target: Option<String>,
    },
    EditCenterline {
        centerline_id: String,
        edit: CenterlineEdit,
    },
    LabelCenterline {
        centerline_id: String,
        label: Option<String>,
    },
    SetMarkers {
        centerline_id: String,
        proximal_s: f64,
        distal_s: f64,
    },
    SegmentInner {
        centerline_id: String,
    },
    SegmentOuter {
        centerline_id: String,
        #[serde(default)]
        threshold: Option<f64>,
    },
    CorrectSurface {
        surface_id: String,
        constraints: Vec<EditConstraint>,
    },
    SetThresholds {
        t_lipid_fib: f64,
        t_fib_calc: f64,
        #[serde(default)]
        de: Option<DeThresholds>,
        #[serde(default)]
        lap_volume_threshold: Option<f64>,
    },
    CreateLesion {
        centerline_id: String,
        #[serde(default)]
        proximal_s: Option<f64>,
        #[serde(default)]
        distal_s: Option<f64>,
    },
    RecomputeLesion {
        lesion_id: String,
    },
    SetNapkinRing {
        lesion_id: String,
        napkin_ring: bool,
    },
    CreateFatRoi {
        centerline_id: String,
        base: WallKind,
        width: RoiWidth,
        start_s: f64,
        end_s: f64,
    },
    AutoFatRois,
    RecomputeFatRoi {
        roi_id: String,
    },
}

impl Command {
    pub fn action(&self) -> &'static str {
        match self {
            Command::RegisterVolume { .. } => "register_volume",
            Command::RegisterDePair { .. } => "register_de_pair",
            Command::IsolateHeart { .. } => "isolate_heart",
            Command::SetSeeds { .. } => "set_seeds",
            Command::ExtractCenterline { .. } => "extract_centerline",
            Command::EditCenterline { .. } => "edit_centerline",
            Command::LabelCenterline { .. } => "label_centerline",
            Command::SetMarkers { .. } => "set_markers",
            Command::SegmentInner { .. } => "segment_inner",
            Command::SegmentOuter { .. } => "segment_outer",
            Command::CorrectSurface { .. } => "correct_surface",
            Command::SetThresholds { .. } => "set_thresholds",
            Command::CreateLesion { .. } => "create_lesion",
            Command::RecomputeLesion { .. } => "recompute_lesion",
            Command::SetNapkinRing { .. } => "set_napkin_ring",
            Command::CreateFatRoi { .. } => "create_fat_roi",
            Command::AutoFatRois => "auto_fat_rois",
            Command::RecomputeFatRoi { .. } => "recompute_fat_roi",
        }
    }
}

/// Result of one applied command.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Applied {
    /// Entities created or changed, primary first.
    pub entities: Vec<String>,
    pub stale: Vec<String>,
    pub notices: Vec<String>,
}

#[derive(Clone, Default)]
struct Volumes {
    low: Option<Arc<Volume>>,
    high: Option<Arc<Volume>>,
}

/// A project plus the loaded volumes and caches it needs.
pub struct Session {
    project: Project,
    volumes: Volumes,
    vesselness: Option<(VoxelBox, Arc<VesselnessField>)>,
    base_dir: Option<PathBuf>,
}

impl Session {
    pub fn new(id: impl Into<String>) -> Self {
        Session {
            project: Project::new(id),
            volumes: Volumes::default(),
            vesselness: None,
            base_dir: None,
        }
    }

    /// Relative volume paths resolve against `dir`.
    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    /// Wrap a loaded project, reading the volumes it references.
    pub fn open(project: Project, base_dir: Option<PathBuf>) -> Result<Self> {
        let mut s = Session {
            project,
            volumes: Volumes::default(),
            vesselness: None,
            base_dir,
        };
        if let Some(r) = s.project.volume.clone() {
            s.volumes.low = Some(Arc::new(s.read_volume(&r.path)?));
        }
        if let Some(r) = s.project.high_kv.clone() {
            s.volumes.high = Some(Arc::new(s.read_volume(&r.path)?));
        }
        Ok(s)
    }

    /// Rebuild a project by applying `events` to a fresh one.
    pub fn replay(id: &str, events: &[PipelineEvent], base_dir: Option<PathBuf>) -> Result<Self> {
        let mut s = Session::new(id);
        s.base_dir = base_dir;
        for e in events {
            s.apply(e.command.clone())?;
        }
        Ok(s)
    }

    pub fn project(&self) -> &Project {
        &self.project
    }

    pub fn volume(&self) -> Result<&Arc<Volume>> {
        self.volumes
            .low
            .as_ref()
            .ok_or_else(|| ServiceError::MissingInput("no volume registered".into()))
    }

    pub fn high_volume(&self) -> Option<&Arc<Volume>> {
        self.volumes.high.as_ref()
    }

    fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        match &self.base_dir {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn read_volume(&self, path: &str) -> Result<Volume> {
        Ok(load_volume(self.resolve(path))?)
    }

    /// Apply `cmd` atomically: on error the project is left untouched.
    pub fn apply(&mut self, cmd: Command) -> Result<Applied> {
        let mut tx = Tx {
            project: self.project.clone(),
            volumes: self.volumes.clone(),
            session: self,
        };
        let applied = tx.exec(&cmd)?;
        let Tx {
            mut project, volumes, ..
        } = tx;
        let entity = applied.entities.first().cloned().unwrap_or_else(|| project.id.clone());
        project.events.push(PipelineEvent {
            timestamp: project.events.len() as u64,
            entity,
            action: cmd.action().to_string(),
            command: cmd,
            stale: applied.stale.clone(),
            notices: applied.notices.clone(),
        });
        self.project = project;
        self.volumes = volumes;
        Ok(applied)
    }

    /// Vesselness over `mask`, computed once per mask.
    fn vesselness_for(&mut self, v: &Volume, mask: VoxelBox) -> Result<Arc<VesselnessField>> {
        if let Some((m, f)) = &self.vesselness {
            if *m == mask && f.dims == v.dims() {
                return Ok(f.clone());
            }
        }
        self.vesselness = None;
        let f = Arc::new(vesselness_with(v, &VesselnessParams::default(), Some(mask))?);
        self.vesselness = Some((mask, f.clone()));
        Ok(f)
    }
}

/// Working copy of a session during one command.
struct Tx<'a> {
    project: Project,
    volumes: Volumes,
    session: &'a mut Session,
}

fn one(id: impl Into<String>) -> Applied {
    Applied {
        entities: vec![id.into()],
        ..Applied::default()
    }
}

impl Tx<'_> {
    fn volume(&self) -> Result<Arc<Volume>> {
        self.volumes
            .low
            .clone()
            .ok_or_else(|| ServiceError::MissingInput("no volume registered".into()))
    }

    fn volume_ref(&self, path: &str) -> Result<(VolumeRef, Volume)> {
        let v = self.session.read_volume(path)?;
        let meta = load_meta(&self.session.resolve(path))?;
        let r = VolumeRef {
            path: path.to_string(),
            dims: v.dims(),
            spacing: v.spacing(),
            origin: v.origin(),
            meta,
        };
        Ok((r, v))
    }

    fn exec(&mut self, cmd: &Command) -> Result<Applied> {
        match cmd {
            Command::RegisterVolume { path } => {
                let (r, v) = self.volume_ref(path)?;
                let all = self.project.all_derived();
                let stale = self.project.mark_stale(&all);
                let p = &mut self.project;
                p.volume = Some(r);
                p.high_kv = None;
                p.registration = None;
                p.mask = None;
                p.crop = None;
                self.volumes = Volumes {
                    low: Some(Arc::new(v)),
                    high: None,
                };
                Ok(Applied {
                    entities: vec!["volume".into()],
                    stale,
                    ..Applied::default()
                })
            }
            Command::RegisterDePair { path } => self.register_de_pair(path),
            Command::IsolateHeart { crop } => {
                let v = self.volume()?;
                let mask = heart_crop(&v, crop.as_ref())?;
                self.project.crop = crop.clone();
                self.project.mask = Some(mask);
                Ok(one("mask"))
            }
            Command::SetSeeds { seeds } => {
                if seeds.len() > 2 {
                    return Err(ServiceError::BadRequest(format!("{} seeds given; use one or two", seeds.len())));
                }
                let v = self.volume()?;
                for s in seeds {
                    v.nearest_voxel(*s).ok_or(coroplaq_core::Error::OutOfBounds(*s))?;
                }
                self.project.seeds = seeds.clone();
                Ok(one("seeds"))
            }
            Command::ExtractCenterline { seeds, label, target } => self.extract(seeds.as_ref(), label, target.as_deref()),
            Command::EditCenterline { centerline_id, edit } => {
                let old = self.project.centerline(centerline_id)?.centerline.clone();
                let new = old.edit(edit)?;
                Ok(self.replace_centerline(centerline_id, &old, new, None))
            }
            Command::LabelCenterline { centerline_id, label } => {
                let e = self
                    .project
                    .centerlines
                    .get_mut(centerline_id)
                    .ok_or_else(|| ServiceError::not_found("centerline", centerline_id))?;
                e.centerline = e.centerline.clone().with_label(label.clone());
                Ok(one(centerline_id))
            }
            Command::SetMarkers {
                centerline_id,
                proximal_s,
                distal_s,
            } => {
                let c = &self.project.centerline(centerline_id)?.centerline;
                let m = SectionMarkers::new(c, *proximal_s, *distal_s)?;
                // surfaces that no longer cover the section need re-segmenting
                let uncovered: Vec<String> = self
                    .project
                    .surfaces
                    .iter()
                    .filter(|(_, s)| s.centerline_id == *centerline_id)
                    .filter(|(_, s)| {
                        let (lo, hi) = s.surface.s_range();
                        m.proximal_s < lo - 1e-9 || m.distal_s > hi + 1e-9
                    })
                    .map(|(id, _)| id.clone())
                    .collect();
                let stale = self.project.mark_stale(&uncovered);
                self.project.markers.insert(centerline_id.clone(), m);
                Ok(Applied {
                    entities: vec![centerline_id.clone()],
                    stale,
                    ..Applied::default()
                })
            }
            Command::SegmentInner { centerline_id } => self.segment_inner(centerline_id),
            Command::SegmentOuter {
                centerline_id,
                threshold,
            } => self.segment_outer(centerline_id, threshold.unwrap_or(DEFAULT_THRESHOLD)),
            Command::CorrectSurface {
                surface_id,
                constraints,
            } => self.correct_surface(surface_id, constraints),
            Command::SetThresholds {
                t_lipid_fib,
                t_fib_calc,
                de,
                lap_volume_threshold,
            } => {
                let t = CompositionThresholds::new(*t_lipid_fib, *t_fib_calc)?;
                if let Some(lap) = lap_volume_threshold {
                    if !(*lap >= 0.0 && lap.is_finite()) {
                        return Err(coroplaq_core::Error::Parameter(format!(
                            "low-attenuation volume threshold {lap} must be non-negative"
                        ))
                        .into());
                    }
                    self.project.lap_volume_threshold = *lap;
                }
                if let Some(de) = de {
                    self.project.de_thresholds = *de;
                }
                self.project.thresholds = t;
                // fresh reports follow the new partition; stale ones wait for a recompute
                let fresh: Vec<String> = self
                    .project
                    .lesions
                    .iter()
                    .filter(|(_, l)| !l.stale)
                    .map(|(id, _)| id.clone())
                    .collect();
                for lid in &fresh {
                    self.recompute_lesion(lid)?;
                }
                let mut out = one("thresholds");
                out.entities.extend(fresh);
                Ok(out)
            }
            Command::CreateLesion {
                centerline_id,
                proximal_s,
                distal_s,
            } => {
                let (inner_id, inner) = self.project.fresh_surface(centerline_id, WallKind::Inner)?;
                let (outer_id, _) = self.project.fresh_surface(centerline_id, WallKind::Outer)?;
                let c = &self.project.centerline(centerline_id)?.centerline;
                let default = self
                    .project
                    .markers
                    .get(centerline_id)
                    .map(|m| (m.proximal_s, m.distal_s))
                    .unwrap_or_else(|| inner.surface.s_range());
                let markers =
                    SectionMarkers::new(c, proximal_s.unwrap_or(default.0), distal_s.unwrap_or(default.1))?;
                let lid = self.project.next_id("L");
                let (report, de) = self.lesion_report(&lid, centerline_id, &inner_id, &outer_id, &markers, false)?;
                self.project.lesions.insert(
                    lid.clone(),
                    Lesion {
                        centerline_id: centerline_id.clone(),
                        markers,
                        inner_id,
                        outer_id,
                        napkin_ring: false,
                        stale: false,
                        report,
                        de,
                    },
                );
                Ok(one(lid))
            }
            Command::RecomputeLesion { lesion_id } => {
                self.project.lesion(lesion_id)?;
                self.recompute_lesion(lesion_id)?;
                Ok(one(lesion_id))
            }
            Command::SetNapkinRing { lesion_id, napkin_ring } => {
                self.project.lesion(lesion_id)?;
                let l = self.project.lesions.get_mut(lesion_id).expect("checked");
                l.napkin_ring = *napkin_ring;
                l.report.napkin_ring_flag = *napkin_ring;
                Ok(one(lesion_id))
            }
            Command::CreateFatRoi {
                centerline_id,
                base,
                width,
                start_s,
                end_s,
            } => {
                let (sid, _) = self.project.fresh_surface(centerline_id, *base)?;
                let fid = self.project.next_id("f");
                let entry = self.fat_roi_entry(centerline_id, &sid, *width, (*start_s, *end_s))?;
                self.project.fat_rois.insert(fid.clone(), entry);
                Ok(one(fid))
            }
            Command::AutoFatRois => self.auto_fat_rois(),
            Command::RecomputeFatRoi { roi_id } => {
                let f = self.project.fat_roi(roi_id)?.clone();
                let (sid, _) = self.project.fresh_surface(&f.centerline_id, f.base)?;
                let mut entry = self.fat_roi_entry(&f.centerline_id, &sid, f.width, (f.start_s, f.end_s))?;
                for w in f.warnings {
                    if !entry.warnings.contains(&w) {
                        entry.warnings.push(w);
                    }
                }
                self.project.fat_rois.insert(roi_id.clone(), entry);
                Ok(one(roi_id))
            }
        }
    }

    fn register_de_pair(&mut self, path: &str) -> Result<Applied> {
        let cur = self
            .project
            .volume
            .clone()
            .ok_or_else(|| ServiceError::MissingInput("register the first volume of the pair first".into()))?;
        let (r, v) = self.volume_ref(path)?;
        let d = detect_de_pair(&cur.meta, &r.meta)?;
        if !d.paired {
            return Err(ServiceError::NotADePair(d.reason.unwrap_or_default()));
        }
        let v = Arc::new(v);
        let mut out = one("high_kv");
        if d.low == Some(PairSlot::Second) {
            // the new scan is the low-kV one and becomes the analysis grid
            let all = self.project.all_derived();
            out.stale = self.project.mark_stale(&all);
            let old = self.volumes.low.take();
            self.project.high_kv = Some(cur);
            self.project.volume = Some(r);
            self.project.mask = None;
            self.project.crop = None;
            self.volumes = Volumes { low: Some(v), high: old };
            out.notices.push("the new scan has the lower tube voltage and replaces the analysis volume".into());
        } else {
            self.project.high_kv = Some(r);
            self.volumes.high = Some(v);
            let lesions: Vec<String> = self.project.lesions.keys().cloned().collect();
            out.stale.extend(self.project.mark_stale(&lesions));
        }
        let (low, high) = (self.volume()?, self.volumes.high.clone().expect("set above"));
        let reg = register_rigid(&low, &high, &RegistrationParams::default())?;
        out.notices.extend(reg.warnings.iter().cloned());
        self.project.registration = Some(reg);
        Ok(out)
    }

    fn extract(&mut self, seeds: Option<&Vec<Vec3>>, label: &Option<String>, target: Option<&str>) -> Result<Applied> {
        let v = self.volume()?;
        let seeds = seeds.cloned().unwrap_or_else(|| self.project.seeds.clone());
        let mask = match self.project.mask {
            Some(m) => m,
            None => heart_crop(&v, None)?,
        };
        let old = match target {
            Some(t) => Some(self.project.centerline(t)?.clone()),
            None => None,
        };
        let ex = match seeds.as_slice() {
            [] => return Err(ServiceError::MissingSeeds),
            [a] => {
                let field = self.session.vesselness_for(&v, mask)?;
                track_single_seed_with_field(&field, &v, *a, Some(mask), &TrackingParams::default())?
            }
            [a, b] => {
                let field = self.session.vesselness_for(&v, mask)?;
                extract_two_seeds_with_field(&field, &v, *a, *b, Some(mask), &ExtractionParams::default())?
            }
            more => {
                return Err(ServiceError::BadRequest(format!("{} seeds given; use one or two", more.len())))
            }
        };
        let label = label.clone().or_else(|| old.as_ref().and_then(|o| o.centerline.branch_label().map(str::to_string)));
        match old {
            Some(o) => {
                let id = target.expect("old implies target").to_string();
                let new = ex.centerline.with_id(&id).with_label(label);
                let mut out = self.replace_centerline(&id, &o.centerline, new, Some(seeds));
                out.notices.extend(ex.warnings);
                Ok(out)
            }
            None => {
                let id = self.project.next_id("cl");
                let c = ex.centerline.with_id(&id).with_label(label);
                self.project.centerlines.insert(
                    id.clone(),
                    CenterlineEntry {
                        centerline: c,
                        seeds,
                        edits: 0,
                        warnings: ex.warnings.clone(),
                    },
                );
                let mut out = one(id);
                out.notices = ex.warnings;
                Ok(out)
            }
        }
    }

    /// Swap in a new geometry for `cid`, carrying markers over and marking
    /// everything derived from the old one stale.
    fn replace_centerline(&mut self, cid: &str, old: &Centerline, new: Centerline, seeds: Option<Vec<Vec3>>) -> Applied {
        if let Some(m) = self.project.markers.get(cid) {
            let m = m.reproject(old, &new);
            self.project.markers.insert(cid.to_string(), m);
        }
        for l in self.project.lesions.values_mut().filter(|l| l.centerline_id == cid) {
            l.markers = l.markers.reproject(old, &new);
        }
        let deps = self.project.dependents_of_centerline(cid);
        let stale = self.project.mark_stale(&deps);
        let e = self.project.centerlines.get_mut(cid).expect("caller checked");
        e.centerline = new;
        match seeds {
            Some(s) => {
                e.seeds = s;
                e.edits = 0;
                e.warnings.clear();
            }
            None => e.edits += 1,
        }
        Applied {
            entities: vec![cid.to_string()],
            stale,
            ..Applied::default()
        }
    }

    fn straighten_over(&self, cid: &str, range: (f64, f64)) -> Result<StraightenedVolume> {
        let v = self.volume()?;
        let c = &self.project.centerline(cid)?.centerline;
        let m = SectionMarkers {
            centerline_id: cid.to_string(),
            proximal_s: range.0,
            distal_s: range.1,
        };
        Ok(straighten(&v, c, &m, &ReformatParams::default())?)
    }

    /// Store `surface` as the `kind` wall of `cid`, reusing its id.
    fn put_surface(&mut self, cid: &str, surface: WallSurface, threshold: Option<f64>) -> (String, Vec<String>) {
        let kind = surface.kind;
        let (sid, stale) = match self.project.surface_id(cid, kind) {
            Some(sid) => {
                let deps: Vec<String> = match kind {
                    WallKind::Inner => self.project.surface_id(cid, WallKind::Outer).into_iter().collect(),
                    WallKind::Outer => Vec::new(),
                };
                let mut stale = self.project.mark_stale(&deps);
                // dependents of this surface go stale; the surface itself is replaced below
                let own: Vec<String> = self
                    .project
                    .lesions
                    .iter()
                    .filter(|(_, l)| l.inner_id == sid || l.outer_id == sid)
                    .map(|(id, _)| id.clone())
                    .chain(
                        self.project
                            .fat_rois
                            .iter()
                            .filter(|(_, f)| f.surface_id == sid)
                            .map(|(id, _)| id.clone()),
                    )
                    .collect();
                stale.extend(self.project.mark_stale(&own));
                (sid, stale)
            }
            None => (self.project.next_id("s"), Vec::new()),
        };
        self.project.surfaces.insert(
            sid.clone(),
            SurfaceEntry {
                centerline_id: cid.to_string(),
                surface,
                stale: false,
                threshold,
                corrections: 0,
            },
        );
        (sid, stale)
    }

    fn segment_inner(&mut self, cid: &str) -> Result<Applied> {
        let c = &self.project.centerline(cid)?.centerline;
        let m = self
            .project
            .markers
            .get(cid)
            .cloned()
            .unwrap_or_else(|| SectionMarkers::full(c));
        let sv = self.straighten_over(cid, (m.proximal_s, m.distal_s))?;
        let surface = segment_inner_wall(&sv, &InnerParams::default())?.surface;
        let (sid, stale) = self.put_surface(cid, surface, None);
        Ok(Applied {
            entities: vec![sid],
            stale,
            ..Applied::default()
        })
    }

    fn segment_outer(&mut self, cid: &str, threshold: f64) -> Result<Applied> {
        self.project.centerline(cid)?;
        let (_, inner) = self.project.fresh_surface(cid, WallKind::Inner)?;
        let inner = inner.surface.clone();
        let sv = self.straighten_over(cid, inner.s_range())?;
        let p = OuterParams {
            threshold,
            ..OuterParams::default()
        };
        let surface = segment_outer_wall(&sv, &inner, &p)?;
        let (sid, stale) = self.put_surface(cid, surface, Some(threshold));
        Ok(Applied {
            entities: vec![sid],
            stale,
            ..Applied::default()
        })
    }

    fn correct_surface(&mut self, sid: &str, constraints: &[EditConstraint]) -> Result<Applied> {
        let entry = self.project.surface(sid)?;
        if entry.stale {
            return Err(ServiceError::Stale {
                kind: "surface",
                id: sid.to_string(),
            });
        }
        let edited = apply_rbf_correction(&entry.surface, constraints)?;
        let cid = entry.centerline_id.clone();
        let partner_kind = match edited.kind {
            WallKind::Inner => WallKind::Outer,
            WallKind::Outer => WallKind::Inner,
        };
        let mut touched = vec![sid.to_string()];
        if let Some(pid) = self.project.surface_id(&cid, partner_kind) {
            let p = self.project.surfaces.get_mut(&pid).expect("listed");
            let ordered = enforce_order(&edited, &p.surface);
            if ordered != p.surface {
                p.surface = ordered;
                touched.push(pid);
            }
        }
        let e = self.project.surfaces.get_mut(sid).expect("checked");
        e.surface = edited;
        e.corrections += 1;
        let deps: Vec<String> = self
            .project
            .lesions
            .iter()
            .filter(|(_, l)| touched.contains(&l.inner_id) || touched.contains(&l.outer_id))
            .map(|(id, _)| id.clone())
            .chain(
                self.project
                    .fat_rois
                    .iter()
                    .filter(|(_, f)| touched.contains(&f.surface_id))
                    .map(|(id, _)| id.clone()),
            )
            .collect();
        let stale = self.project.mark_stale(&deps);
        Ok(Applied {
            entities: touched,
            stale,
            ..Applied::default()
        })
    }

    fn lesion_report(
        &self,
        lid: &str,
        cid: &str,
        inner_id: &str,
        outer_id: &str,
        markers: &SectionMarkers,
        napkin_ring: bool,
    ) -> Result<(LesionReport, Option<DeComposition>)> {
        let v = self.volume()?;
        let p = &self.project;
        let c = &p.centerline(cid)?.centerline;
        let (inner, outer) = (&p.surface(inner_id)?.surface, &p.surface(outer_id)?.surface);
        let region = build_plaque_region(&v, c, inner, outer, markers, lid)?;
        let comp = composition_histogram(&region, &v, &p.thresholds)?;
        let sten = stenosis_and_remodeling(inner, outer, markers)?;
        let report = LesionReport::assemble(
            &region,
            markers,
            p.thresholds,
            comp,
            sten,
            p.lap_volume_threshold,
            napkin_ring,
        );
        let de = match (&self.volumes.high, &p.registration) {
            (Some(high), Some(reg)) => {
                let pair = DePair {
                    low: &v,
                    high,
                    transform: reg.transform,
                };
                Some(de_composition(&region, &pair, &p.de_thresholds)?)
            }
            _ => None,
        };
        Ok((report, de))
    }

    fn recompute_lesion(&mut self, lid: &str) -> Result<()> {
        let l = self.project.lesion(lid)?.clone();
        let (inner_id, _) = self.project.fresh_surface(&l.centerline_id, WallKind::Inner)?;
        let (outer_id, _) = self.project.fresh_surface(&l.centerline_id, WallKind::Outer)?;
        let (report, de) = self.lesion_report(lid, &l.centerline_id, &inner_id, &outer_id, &l.markers, l.napkin_ring)?;
        self.project.lesions.insert(
            lid.to_string(),
            Lesion {
                inner_id,
                outer_id,
                stale: false,
                report,
                de,
                ..l
            },
        );
        Ok(())
    }

    fn entry_from_roi(&self, sid: &str, roi: FatRoi, v: &Volume) -> FatRoiEntry {
        let stats = fat_stats(&roi, v);
        FatRoiEntry {
            centerline_id: roi.centerline_id,
            surface_id: sid.to_string(),
            branch_label: roi.branch_label,
            base: roi.base,
            width: roi.width,
            start_s: roi.start_s,
            end_s: roi.end_s,
            stale: false,
            stats,
            warnings: roi.warnings,
        }
    }

    fn fat_roi_entry(&self, cid: &str, sid: &str, width: RoiWidth, range: (f64, f64)) -> Result<FatRoiEntry> {
        let v = self.volume()?;
        let c = &self.project.centerline(cid)?.centerline;
        let wall = &self.project.surface(sid)?.surface;
        let roi = build_fat_roi(&v, c, wall, width, range)?;
        Ok(self.entry_from_roi(sid, roi, &v))
    }

    fn auto_fat_rois(&mut self) -> Result<Applied> {
        let v = self.volume()?;
        let p = &self.project;
        let mut notices = Vec::new();
        let mut branches = Vec::new();
        for (cid, e) in &p.centerlines {
            if e.centerline.branch_label().is_none() {
                continue;
            }
            match p.fresh_surface(cid, WallKind::Outer) {
                Ok((_, s)) => branches.push(BranchWalls {
                    centerline: &e.centerline,
                    outer: &s.surface,
                }),
                Err(err) => notices.push(format!("{cid}: {err}")),
            }
        }
        let auto = auto_branch_rois(&v, &branches)?;
        notices.extend(auto.notices);
        let entries: Vec<FatRoiEntry> = auto
            .rois
            .into_iter()
            .map(|roi| {
                let sid = p
                    .surface_id(&roi.centerline_id, WallKind::Outer)
                    .expect("branch walls come from the project");
                self.entry_from_roi(&sid, roi, &v)
            })
            .collect();
        let mut out = Applied {
            notices,
            ..Applied::default()
        };
        for e in entries {
            let fid = self.project.next_id("f");
            self.project.fat_rois.insert(fid.clone(), e);
            out.entities.push(fid);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commands_round_trip_through_json() {
        let cmds = vec![
            Command::SetSeeds {
                seeds: vec![[1.0, 2.0, 3.0]],
            },
            Command::EditCenterline {
                centerline_id: "cl1".into(),
                edit: CenterlineEdit::Append { point: [0.1, 0.2, 0.3] },
            },
            Command::CreateFatRoi {
                centerline_id: "cl1".into(),
                base: WallKind::Outer,
                width: RoiWidth::Manual { mm: 2.5 },
                start_s: 0.0,
                end_s: 10.0,
            },
            Command::AutoFatRois,
        ];
        for c in cmds {
            let j = serde_json::to_string(&c).unwrap();
            assert_eq!(serde_json::from_str::<Command>(&j).unwrap(), c, "{j}");
        }
        let j = serde_json::to_value(Command::AutoFatRois).unwrap();
        assert_eq!(j, serde_json::json!({"op": "auto_fat_rois"}));
    }

    #[test]
    fn failed_commands_leave_no_trace() {
        let mut s = Session::new("p");
        let before = serde_json::to_string(s.project()).unwrap();
        assert!(matches!(
            s.apply(Command::SegmentInner {
                centerline_id: "cl9".into()
            }),
            Err(ServiceError::NotFound { .. })
        ));
        assert!(matches!(
            s.apply(Command::ExtractCenterline {
                seeds: None,
                label: None,
                target: None
            }),
            Err(ServiceError::MissingInput(_))
        ));
        assert_eq!(serde_json::to_string(s.project()).unwrap(), before);
    }

    #[test]
    fn threshold_validation_and_logging() {
        let mut s = Session::new("p");
        assert!(s
            .apply(Command::SetThresholds {
                t_lipid_fib: 200.0,
                t_fib_calc: 100.0,
                de: None,
                lap_volume_threshold: None
            })
            .is_err());
        s.apply(Command::SetThresholds {
            t_lipid_fib: 20.0,
            t_fib_calc: 150.0,
            de: None,
            lap_volume_threshold: Some(2.0),
        })
        .unwrap();
        let p = s.project();
        assert_eq!(p.thresholds, CompositionThresholds::new(20.0, 150.0).unwrap());
        assert_eq!(p.lap_volume_threshold, 2.0);
        assert_eq!(p.events.len(), 1);
        assert_eq!(p.events[0].timestamp, 0);
        assert_eq!(p.events[0].action, "set_thresholds");
    }
}
