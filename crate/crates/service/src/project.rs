//! Persistent project state.

use std::collections::BTreeMap;

use coroplaq_core::dual_energy::{DeComposition, DeMeta, DeThresholds, Registration};
use coroplaq_core::geom::Vec3;
use coroplaq_core::perivascular::{FatStats, RoiWidth};
use coroplaq_core::plaque::{CompositionThresholds, LesionReport, DEFAULT_LAP_VOLUME};
use coroplaq_core::vesselness::VoxelBox;
use coroplaq_core::wall::{WallKind, WallSurface};
use coroplaq_core::{Centerline, SectionMarkers};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::session::Command;

pub const SCHEMA_VERSION: u32 = 1;

/// A volume file registered with the project.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeRef {
    pub path: String,
    pub dims: [usize; 3],
    pub spacing: Vec3,
    pub origin: Vec3,
    #[serde(default)]
    pub meta: DeMeta,
}

/// World-space crop box standing in for heart isolation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropBox {
    pub min: Vec3,
    pub max: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterlineEntry {
    pub centerline: Centerline,
    /// Seeds it was extracted from.
    pub seeds: Vec<Vec3>,
    /// Number of manual edits applied since extraction.
    #[serde(default)]
    pub edits: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceEntry {
    pub centerline_id: String,
    pub surface: WallSurface,
    pub stale: bool,
    /// Edge threshold of an outer wall.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub corrections: u32,
}

impl SurfaceEntry {
    pub fn kind(&self) -> WallKind {
        self.surface.kind
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub centerline_id: String,
    pub markers: SectionMarkers,
    pub inner_id: String,
    pub outer_id: String,
    pub napkin_ring: bool,
    pub stale: bool,
    pub report: LesionReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub de: Option<DeComposition>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FatRoiEntry {
    pub centerline_id: String,
    pub surface_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_label: Option<String>,
    pub base: WallKind,
    pub width: RoiWidth,
    pub start_s: f64,
    pub end_s: f64,
    pub stale: bool,
    pub stats: FatStats,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Last issued number per id prefix.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub centerline: u64,
    pub surface: u64,
    pub lesion: u64,
    pub fat_roi: u64,
}

/// One applied command. `timestamp` is the position in the log, which keeps
/// replays byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineEvent {
    pub timestamp: u64,
    pub entity: String,
    pub action: String,
    pub command: Command,
    /// Entities this command turned stale.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stale: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notices: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub schema_version: u32,
    pub id: String,
    pub volume: Option<VolumeRef>,
    /// High-kV companion of a dual-energy pair.
    pub high_kv: Option<VolumeRef>,
    pub registration: Option<Registration>,
    pub crop: Option<CropBox>,
    /// Voxel region the centerline search is confined to.
    pub mask: Option<VoxelBox>,
    pub seeds: Vec<Vec3>,
    pub centerlines: BTreeMap<String, CenterlineEntry>,
    /// Analysed section per centerline.
    pub markers: BTreeMap<String, SectionMarkers>,
    pub surfaces: BTreeMap<String, SurfaceEntry>,
    pub lesions: BTreeMap<String, Lesion>,
    pub fat_rois: BTreeMap<String, FatRoiEntry>,
    pub thresholds: CompositionThresholds,
    pub de_thresholds: DeThresholds,
    pub lap_volume_threshold: f64,
    pub counters: Counters,
    #[serde(default)]
    pub notes: Vec<String>,
    pub events: Vec<PipelineEvent>,
}

impl Project {
    pub fn new(id: impl Into<String>) -> Self {
        Project {
            schema_version: SCHEMA_VERSION,
            id: id.into(),
            volume: None,
            high_kv: None,
            registration: None,
            crop: None,
            mask: None,
            seeds: Vec::new(),
            centerlines: BTreeMap::new(),
            markers: BTreeMap::new(),
            surfaces: BTreeMap::new(),
            lesions: BTreeMap::new(),
            fat_rois: BTreeMap::new(),
            thresholds: CompositionThresholds::default(),
            de_thresholds: DeThresholds::default(),
            lap_volume_threshold: DEFAULT_LAP_VOLUME,
            counters: Counters::default(),
            notes: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn centerline(&self, id: &str) -> Result<&CenterlineEntry> {
        self.centerlines
            .get(id)
            .ok_or_else(|| ServiceError::not_found("centerline", id))
    }

    pub fn surface(&self, id: &str) -> Result<&SurfaceEntry> {
        self.surfaces.get(id).ok_or_else(|| ServiceError::not_found("surface", id))
    }

    pub fn lesion(&self, id: &str) -> Result<&Lesion> {
        self.lesions.get(id).ok_or_else(|| ServiceError::not_found("lesion", id))
    }

    pub fn fat_roi(&self, id: &str) -> Result<&FatRoiEntry> {
        self.fat_rois.get(id).ok_or_else(|| ServiceError::not_found("fat ROI", id))
    }

    /// Id of the `kind` surface of centerline `cid`.
    pub fn surface_id(&self, cid: &str, kind: WallKind) -> Option<String> {
        self.surfaces
            .iter()
            .find(|(_, s)| s.centerline_id == cid && s.kind() == kind)
            .map(|(id, _)| id.clone())
    }

    /// Fresh surface of `kind` on `cid`; errors when missing or stale.
    pub fn fresh_surface(&self, cid: &str, kind: WallKind) -> Result<(String, &SurfaceEntry)> {
        let name = match kind {
            WallKind::Inner => "inner wall",
            WallKind::Outer => "outer wall",
        };
        let id = self
            .surface_id(cid, kind)
            .ok_or_else(|| ServiceError::MissingInput(format!("centerline {cid} has no {name}; segment it first")))?;
        let s = &self.surfaces[&id];
        if s.stale {
            return Err(ServiceError::Stale { kind: "surface", id });
        }
        Ok((id, s))
    }

    pub fn next_id(&mut self, prefix: &str) -> String {
        let c = match prefix {
            "cl" => &mut self.counters.centerline,
            "s" => &mut self.counters.surface,
            "L" => &mut self.counters.lesion,
            "f" => &mut self.counters.fat_roi,
            _ => unreachable!("unknown id prefix {prefix}"),
        };
        *c += 1;
        format!("{prefix}{c}")
    }

    /// Mark `ids` stale along with everything derived from them. Returns the
    /// ids that changed, in the order they were reached.
    pub fn mark_stale(&mut self, ids: &[String]) -> Vec<String> {
        let mut changed = Vec::new();
        let mut queue: Vec<String> = ids.to_vec();
        while let Some(id) = queue.pop() {
            if let Some(s) = self.surfaces.get_mut(&id) {
                if !s.stale {
                    s.stale = true;
                    changed.push(id.clone());
                }
                let (cid, kind) = (s.centerline_id.clone(), s.kind());
                if kind == WallKind::Inner {
                    if let Some(o) = self.surface_id(&cid, WallKind::Outer) {
                        queue.push(o);
                    }
                }
                for (lid, l) in &mut self.lesions {
                    if (l.inner_id == id || l.outer_id == id) && !l.stale {
                        l.stale = true;
                        changed.push(lid.clone());
                    }
                }
                for (fid, f) in &mut self.fat_rois {
                    if f.surface_id == id && !f.stale {
                        f.stale = true;
                        changed.push(fid.clone());
                    }
                }
            } else if let Some(l) = self.lesions.get_mut(&id) {
                if !l.stale {
                    l.stale = true;
                    changed.push(id);
                }
            } else if let Some(f) = self.fat_rois.get_mut(&id) {
                if !f.stale {
                    f.stale = true;
                    changed.push(id);
                }
            }
        }
        changed
    }

    /// Everything derived from centerline `cid`.
    pub fn dependents_of_centerline(&self, cid: &str) -> Vec<String> {
        let mut out: Vec<String> = self
            .surfaces
            .iter()
            .filter(|(_, s)| s.centerline_id == cid)
            .map(|(id, _)| id.clone())
            .collect();
        out.extend(self.lesions.iter().filter(|(_, l)| l.centerline_id == cid).map(|(id, _)| id.clone()));
        out.extend(self.fat_rois.iter().filter(|(_, f)| f.centerline_id == cid).map(|(id, _)| id.clone()));
        out
    }

    /// Every surface, lesion and fat ROI.
    pub fn all_derived(&self) -> Vec<String> {
        self.surfaces
            .keys()
            .chain(self.lesions.keys())
            .chain(self.fat_rois.keys())
            .cloned()
            .collect()
    }

    /// Referential integrity across entities.
    pub fn check_integrity(&self) -> Result<()> {
        let bad = |m: String| Err(ServiceError::Integrity(m));
        for (cid, c) in &self.centerlines {
            if c.centerline.id() != cid {
                return bad(format!("centerline {cid} carries id {}", c.centerline.id()));
            }
        }
        for (cid, m) in &self.markers {
            if !self.centerlines.contains_key(cid) || m.centerline_id != *cid {
                return bad(format!("markers reference missing centerline {cid}"));
            }
        }
        for (sid, s) in &self.surfaces {
            if !self.centerlines.contains_key(&s.centerline_id) {
                return bad(format!("surface {sid} references missing centerline {}", s.centerline_id));
            }
        }
        for (lid, l) in &self.lesions {
            let pair = (self.surfaces.get(&l.inner_id), self.surfaces.get(&l.outer_id));
            let (Some(i), Some(o)) = pair else {
                return bad(format!("lesion {lid} references a missing surface"));
            };
            if i.kind() != WallKind::Inner || o.kind() != WallKind::Outer {
                return bad(format!("lesion {lid} surfaces are not an inner/outer pair"));
            }
            if i.centerline_id != l.centerline_id || o.centerline_id != l.centerline_id {
                return bad(format!("lesion {lid} surfaces belong to another centerline"));
            }
        }
        for (fid, f) in &self.fat_rois {
            match self.surfaces.get(&f.surface_id) {
                Some(s) if s.centerline_id == f.centerline_id => {}
                _ => return bad(format!("fat ROI {fid} references a missing surface")),
            }
        }
        Ok(())
    }
}
