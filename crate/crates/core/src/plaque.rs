//! Lesion regions, composition histograms, stenosis and high-risk features.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::centerline::{Centerline, SectionMarkers};
use crate::error::{Error, Result};
use crate::tube::{check_coverage, collect_voxels, TubeFrames};
use crate::volume::Volume;
use crate::wall::WallSurface;

pub const HIST_MIN: i32 = -1024;
pub const HIST_MAX: i32 = 3071;
const HIST_BINS: usize = (HIST_MAX - HIST_MIN + 1) as usize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionThresholds {
    pub t_lipid_fib: f64,
    pub t_fib_calc: f64,
}

impl Default for CompositionThresholds {
    fn default() -> Self {
        Self {
            t_lipid_fib: 30.0,
            t_fib_calc: 130.0,
        }
    }
}

impl CompositionThresholds {
    pub fn new(t_lipid_fib: f64, t_fib_calc: f64) -> Result<Self> {
        let t = Self { t_lipid_fib, t_fib_calc };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_lipid_fib < self.t_fib_calc) {
            return Err(Error::Parameter(format!(
                "lipid/fibrotic threshold {} must be below fibrotic/calcified threshold {}",
                self.t_lipid_fib, self.t_fib_calc
            )));
        }
        Ok(())
    }

    pub fn classify(&self, hu: f64) -> TissueClass {
        if hu < self.t_lipid_fib {
            TissueClass::LipidRich
        } else if hu < self.t_fib_calc {
            TissueClass::Fibrotic
        } else {
            TissueClass::Calcified
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TissueClass {
    LipidRich,
    Fibrotic,
    Calcified,
}

/// Voxels of one lesion between the inner and outer wall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaqueRegion {
    pub lesion_id: String,
    /// Ascending linear voxel indices.
    pub voxels: Vec<usize>,
    pub voxel_volume: f64,
}

impl PlaqueRegion {
    pub fn volume_mm3(&self) -> f64 {
        self.voxels.len() as f64 * self.voxel_volume
    }
}

/// Voxels whose centers satisfy `inner ≤ r < outer` in the polar frame of
/// their nearest section, with `proximal_s ≤ s < distal_s`.
pub fn build_plaque_region(
    v: &Volume,
    c: &Centerline,
    inner: &WallSurface,
    outer: &WallSurface,
    markers: &SectionMarkers,
    lesion_id: &str,
) -> Result<PlaqueRegion> {
    check_pair(inner, outer)?;
    check_coverage(inner, markers.proximal_s, markers.distal_s)?;
    let tube = TubeFrames::new(c, inner);
    let reach: Vec<f64> = outer
        .radii
        .iter()
        .map(|r| r.iter().cloned().fold(0.0, f64::max))
        .collect();
    let voxels = collect_voxels(
        v,
        &tube,
        inner.step_s,
        (markers.proximal_s, markers.distal_s),
        &reach,
        |tc| {
            let ri = inner.radius_at(tc.section, tc.theta);
            let ro = outer.radius_at(tc.section, tc.theta);
            ri <= tc.r && tc.r < ro
        },
    );
    Ok(PlaqueRegion {
        lesion_id: lesion_id.to_string(),
        voxels,
        voxel_volume: v.voxel_volume(),
    })
}

pub(crate) fn check_pair(inner: &WallSurface, outer: &WallSurface) -> Result<()> {
    inner.check_shape()?;
    outer.check_shape()?;
    if inner.section_s != outer.section_s || inner.angles_n != outer.angles_n {
        return Err(Error::Parameter("inner and outer surfaces are not sampled alike".into()));
    }
    Ok(())
}

/// HU histogram with 1 HU bins over `[-1024, 3071]`; values outside are
/// counted in the end bins.
#[derive(Clone, Debug, PartialEq)]
pub struct HuHistogram {
    counts: Vec<u64>,
}

impl Default for HuHistogram {
    fn default() -> Self {
        Self {
            counts: vec![0; HIST_BINS],
        }
    }
}

impl HuHistogram {
    pub fn add(&mut self, hu: i32) {
        self.counts[(hu.clamp(HIST_MIN, HIST_MAX) - HIST_MIN) as usize] += 1;
    }

    pub fn count(&self, hu: i32) -> u64 {
        if (HIST_MIN..=HIST_MAX).contains(&hu) {
            self.counts[(hu - HIST_MIN) as usize]
        } else {
            0
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Non-empty bins as `(bin_start, count)`.
    pub fn nonzero(&self) -> Vec<(i32, u64)> {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(i, c)| (i as i32 + HIST_MIN, *c))
            .collect()
    }

    pub fn from_values(values: impl IntoIterator<Item = i32>) -> Self {
        let mut h = Self::default();
        for v in values {
            h.add(v);
        }
        h
    }

    /// CSV text: `hu_bin_start,hu_bin_end,voxel_count,volume_mm3`, one row per non-empty bin.
    pub fn to_csv(&self, voxel_volume: f64) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(["hu_bin_start", "hu_bin_end", "voxel_count", "volume_mm3"])?;
        for (hu, n) in self.nonzero() {
            w.write_record([
                hu.to_string(),
                (hu + 1).to_string(),
                n.to_string(),
                format_volume(n as f64 * voxel_volume),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut h = Self::default();
        for rec in r.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<i64> {
                rec.get(i)
                    .and_then(|f| f.trim().parse().ok())
                    .ok_or_else(|| Error::UnsupportedFormat(format!("histogram row {:?}", rec)))
            };
            let hu = parse(0)?;
            if !(HIST_MIN as i64..=HIST_MAX as i64).contains(&hu) {
                return Err(Error::UnsupportedFormat(format!("bin {hu} outside the histogram range")));
            }
            h.counts[(hu - HIST_MIN as i64) as usize] += parse(2)? as u64;
        }
        Ok(h)
    }
}

impl Serialize for HuHistogram {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.nonzero().serialize(s)
    }
}

impl<'de> Deserialize<'de> for HuHistogram {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let bins = Vec::<(i32, u64)>::deserialize(d)?;
        let mut h = Self::default();
        for (hu, n) in bins {
            if !(HIST_MIN..=HIST_MAX).contains(&hu) {
                return Err(serde::de::Error::custom(format!("bin {hu} outside the histogram range")));
            }
            h.counts[(hu - HIST_MIN) as usize] += n;
        }
        Ok(h)
    }
}

/// Volume in mm³ rounded to 6 decimals, shortest form.
pub fn format_volume(x: f64) -> String {
    let r = (x * 1e6).round() / 1e6;
    format!("{r}")
}

pub fn export_histogram(h: &HuHistogram, voxel_volume: f64, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(h.to_csv(voxel_volume)?.as_bytes())?;
    Ok(())
}

pub fn import_histogram(path: impl AsRef<Path>) -> Result<HuHistogram> {
    HuHistogram::from_csv(&std::fs::read_to_string(path)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub lipid_rich: u64,
    pub fibrotic: u64,
    pub calcified: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.lipid_rich + self.fibrotic + self.calcified
    }

    pub fn add(&mut self, c: TissueClass) {
        match c {
            TissueClass::LipidRich => self.lipid_rich += 1,
            TissueClass::Fibrotic => self.fibrotic += 1,
            TissueClass::Calcified => self.calcified += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    pub counts: ClassCounts,
    pub lipid_rich_mm3: f64,
    pub fibrotic_mm3: f64,
    pub calcified_mm3: f64,
    pub total_mm3: f64,
    pub histogram: HuHistogram,
}

pub fn composition_histogram(r: &PlaqueRegion, v: &Volume, t: &CompositionThresholds) -> Result<Composition> {
    t.validate()?;
    let mut counts = ClassCounts::default();
    let mut histogram = HuHistogram::default();
    for &idx in &r.voxels {
        let hu = v.data()[idx];
        counts.add(t.classify(hu as f64));
        histogram.add(hu as i32);
    }
    let vv = v.voxel_volume();
    Ok(Composition {
        counts,
        lipid_rich_mm3: counts.lipid_rich as f64 * vv,
        fibrotic_mm3: counts.fibrotic as f64 * vv,
        calcified_mm3: counts.calcified as f64 * vv,
        total_mm3: counts.total() as f64 * vv,
        histogram,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionMetrics {
    pub s: f64,
    pub lumen_area_mm2: f64,
    pub vessel_area_mm2: f64,
    pub reference_lumen_area_mm2: f64,
    pub reference_vessel_area_mm2: f64,
    pub stenosis_area_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StenosisResult {
    pub positions: Vec<PositionMetrics>,
    /// Maximum area stenosis over the lesion, clamped to `[0, 100]`.
    pub stenosis_area_pct: f64,
    pub remodeling_index: f64,
    /// Arclength of the maximum stenosis.
    pub s_max: f64,
}

/// Area stenosis against a reference interpolated linearly between the markers.
pub fn stenosis_and_remodeling(
    inner: &WallSurface,
    outer: &WallSurface,
    markers: &SectionMarkers,
) -> Result<StenosisResult> {
    check_pair(inner, outer)?;
    let (p, d) = (markers.proximal_s, markers.distal_s);
    check_coverage(inner, p, d)?;
    let (kp, kd) = (inner.nearest_section(p), inner.nearest_section(d));
    let (lp, ld) = (inner.section_area(kp), inner.section_area(kd));
    let (vp, vd) = (outer.section_area(kp), outer.section_area(kd));
    let mut positions = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    for (k, &s) in inner.section_s.iter().enumerate() {
        if s < p - 1e-9 || s > d + 1e-9 {
            continue;
        }
        let w = ((s - p) / (d - p)).clamp(0.0, 1.0);
        let ref_l = (1.0 - w) * lp + w * ld;
        let ref_v = (1.0 - w) * vp + w * vd;
        if !(ref_l > 0.0) {
            return Err(Error::DegenerateReference(ref_l));
        }
        if !(ref_v > 0.0) {
            return Err(Error::DegenerateReference(ref_v));
        }
        let lumen = inner.section_area(k);
        let sten = 100.0 * (1.0 - lumen / ref_l);
        if best.is_none_or(|(b, _)| sten > b) {
            best = Some((sten, positions.len()));
        }
        positions.push(PositionMetrics {
            s,
            lumen_area_mm2: lumen,
            vessel_area_mm2: outer.section_area(k),
            reference_lumen_area_mm2: ref_l,
            reference_vessel_area_mm2: ref_v,
            stenosis_area_pct: sten,
        });
    }
    let (sten, i) = best.ok_or_else(|| Error::Coverage {
        start: p,
        end: d,
        covered_start: inner.s_range().0,
        covered_end: inner.s_range().1,
    })?;
    let at = &positions[i];
    Ok(StenosisResult {
        stenosis_area_pct: sten.clamp(0.0, 100.0),
        remodeling_index: at.vessel_area_mm2 / at.reference_vessel_area_mm2,
        s_max: at.s,
        positions,
    })
}

pub const DEFAULT_LAP_VOLUME: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HighRiskFlags {
    pub low_attenuation: bool,
    pub napkin_ring: bool,
}

/// Complete plaque report for one lesion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionReport {
    pub lesion_id: String,
    pub centerline_id: String,
    pub proximal_s: f64,
    pub distal_s: f64,
    pub thresholds: CompositionThresholds,
    pub voxel_volume_mm3: f64,
    pub voxel_counts: ClassCounts,
    pub lipid_rich_mm3: f64,
    pub fibrotic_mm3: f64,
    pub calcified_mm3: f64,
    pub total_plaque_mm3: f64,
    pub positions: Vec<PositionMetrics>,
    pub stenosis_area_pct: f64,
    pub remodeling_index: f64,
    pub lap_volume_threshold_mm3: f64,
    pub low_attenuation_flag: bool,
    /// Set only by manual annotation.
    pub napkin_ring_flag: bool,
    pub histogram: HuHistogram,
}

impl LesionReport {
    pub fn assemble(
        region: &PlaqueRegion,
        markers: &SectionMarkers,
        thresholds: CompositionThresholds,
        comp: Composition,
        sten: StenosisResult,
        lap_volume_threshold: f64,
        napkin_ring: bool,
    ) -> Self {
        let mut r = LesionReport {
            lesion_id: region.lesion_id.clone(),
            centerline_id: markers.centerline_id.clone(),
            proximal_s: markers.proximal_s,
            distal_s: markers.distal_s,
            thresholds,
            voxel_volume_mm3: region.voxel_volume,
            voxel_counts: comp.counts,
            lipid_rich_mm3: comp.lipid_rich_mm3,
            fibrotic_mm3: comp.fibrotic_mm3,
            calcified_mm3: comp.calcified_mm3,
            total_plaque_mm3: comp.total_mm3,
            positions: sten.positions,
            stenosis_area_pct: sten.stenosis_area_pct,
            remodeling_index: sten.remodeling_index,
            lap_volume_threshold_mm3: lap_volume_threshold,
            low_attenuation_flag: false,
            napkin_ring_flag: napkin_ring,
            histogram: comp.histogram,
        };
        r.low_attenuation_flag = flag_high_risk(&r, lap_volume_threshold).low_attenuation;
        r
    }

    pub fn export_histogram(&self, path: impl AsRef<Path>) -> Result<()> {
        export_histogram(&self.histogram, self.voxel_volume_mm3, path)
    }
}

pub fn flag_high_risk(report: &LesionReport, lap_volume_threshold: f64) -> HighRiskFlags {
    HighRiskFlags {
        low_attenuation: report.lipid_rich_mm3 >= lap_volume_threshold,
        napkin_ring: report.napkin_ring_flag,
    }
}
