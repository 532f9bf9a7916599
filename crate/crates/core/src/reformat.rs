//! Cross-sectional and straightened (curved planar) reformation along a centerline.

use serde::{Deserialize, Serialize};

use crate::centerline::{Centerline, SectionMarkers};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::volume::Volume;

pub const DEFAULT_EXTENT: f64 = 20.0;
pub const DEFAULT_SPACING: f64 = 0.1;
pub const DEFAULT_STEP: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReformatParams {
    pub extent: f64,
    pub spacing: f64,
    pub step_s: f64,
}

impl Default for ReformatParams {
    fn default() -> Self {
        Self {
            extent: DEFAULT_EXTENT,
            spacing: DEFAULT_SPACING,
            step_s: DEFAULT_STEP,
        }
    }
}

/// Square HU image in the plane orthogonal to the centerline at `center_s`.
///
/// Pixel `(col, row)` sits at `center + (col - c)·spacing·axes[0] + (row - c)·spacing·axes[1]`
/// with `c = (size - 1) / 2`, so the center pixel lies exactly on the centerline.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossSection {
    pub center_s: f64,
    pub center: Vec3,
    pub tangent: Vec3,
    pub axes: [Vec3; 2],
    pub size: usize,
    pub spacing: f64,
    /// Row-major HU samples.
    pub grid: Vec<f32>,
    /// Pixels outside the volume domain (filled with −1024).
    pub out_of_domain: usize,
    /// Per-pixel domain flag, empty when every pixel is inside.
    pub inside: Vec<bool>,
}

impl CrossSection {
    /// Side length covered by the pixel centers.
    pub fn extent(&self) -> f64 {
        (self.size - 1) as f64 * self.spacing
    }

    fn half(&self) -> f64 {
        (self.size - 1) as f64 / 2.0
    }

    pub fn pixel(&self, col: usize, row: usize) -> f32 {
        self.grid[row * self.size + col]
    }

    /// World position of in-plane coordinates `(x, y)` in mm from the center.
    pub fn world_at(&self, x: f64, y: f64) -> Vec3 {
        geom::axpy(geom::axpy(self.center, x, self.axes[0]), y, self.axes[1])
    }

    /// Bilinear sample at in-plane coordinates (mm), clamped to the grid border.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let h = self.half();
        let max = (self.size - 1) as f64;
        let u = (x / self.spacing + h).clamp(0.0, max);
        let v = (y / self.spacing + h).clamp(0.0, max);
        let (c0, r0) = (u.floor() as usize, v.floor() as usize);
        let (c1, r1) = ((c0 + 1).min(self.size - 1), (r0 + 1).min(self.size - 1));
        let (fu, fv) = (u - c0 as f64, v - r0 as f64);
        let p = |c, r| self.pixel(c, r) as f64;
        let top = p(c0, r0) * (1.0 - fu) + p(c1, r0) * fu;
        let bot = p(c0, r1) * (1.0 - fu) + p(c1, r1) * fu;
        top * (1.0 - fv) + bot * fv
    }

    /// Like [`CrossSection::sample`] but `None` when any contributing pixel lies
    /// outside the volume domain.
    pub fn sample_valid(&self, x: f64, y: f64) -> Option<f64> {
        if !self.inside.is_empty() {
            let h = self.half();
            let max = (self.size - 1) as f64;
            let u = (x / self.spacing + h).clamp(0.0, max);
            let v = (y / self.spacing + h).clamp(0.0, max);
            let (c0, r0) = (u.floor() as usize, v.floor() as usize);
            let (c1, r1) = ((c0 + 1).min(self.size - 1), (r0 + 1).min(self.size - 1));
            for (c, r) in [(c0, r0), (c1, r0), (c0, r1), (c1, r1)] {
                if !self.inside[r * self.size + c] {
                    return None;
                }
            }
        }
        Some(self.sample(x, y))
    }

    /// Binary export: little-endian `u32` header length, JSON header
    /// `{width, height, spacing, center_s}`, then row-major little-endian `i16` pixels.
    pub fn to_payload(&self) -> Vec<u8> {
        let header = serde_json::json!({
            "width": self.size,
            "height": self.size,
            "spacing": self.spacing,
            "center_s": self.center_s,
        })
        .to_string();
        let mut out = Vec::with_capacity(4 + header.len() + 2 * self.grid.len());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for &v in &self.grid {
            let q = v.round().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
            out.extend_from_slice(&q.to_le_bytes());
        }
        out
    }
}

/// Header of a section payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayloadHeader {
    pub width: usize,
    pub height: usize,
    pub spacing: f64,
    pub center_s: f64,
}

/// Decode a payload produced by [`CrossSection::to_payload`].
pub fn parse_payload(bytes: &[u8]) -> Result<(PayloadHeader, Vec<i16>)> {
    let bad = |m: &str| Error::UnsupportedFormat(format!("section payload: {m}"));
    if bytes.len() < 4 {
        return Err(bad("truncated"));
    }
    let n = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let body = bytes.get(4..4 + n).ok_or_else(|| bad("truncated header"))?;
    let header: PayloadHeader = serde_json::from_slice(body)?;
    let px = &bytes[4 + n..];
    if px.len() != 2 * header.width * header.height {
        return Err(bad("pixel count does not match header"));
    }
    let pixels = px.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
    Ok((header, pixels))
}

fn grid_size(extent: f64, spacing: f64) -> Result<usize> {
    if !(spacing > 0.0 && extent > 0.0 && extent.is_finite()) {
        return Err(Error::Parameter(format!(
            "section extent {extent} and spacing {spacing} must be positive"
        )));
    }
    let half = (extent / (2.0 * spacing)).round() as usize;
    Ok(2 * half.max(1) + 1)
}

/// Resample the plane orthogonal to `c` at arclength `s`.
pub fn cross_section(v: &Volume, c: &Centerline, s: f64, extent: f64, spacing: f64) -> Result<CrossSection> {
    let total = c.total_length();
    if !(s >= -1e-9 && s <= total + 1e-9) {
        return Err(Error::ArclengthOutOfRange { s, total });
    }
    let s = s.clamp(0.0, total);
    let size = grid_size(extent, spacing)?;
    let frame = c.frame_at(s);
    let center = c.point_at(s);
    let axes = [frame.normal, frame.binormal];
    let h = (size - 1) as f64 / 2.0;
    let mut grid = Vec::with_capacity(size * size);
    let mut out_of_domain = 0;
    let mut inside = Vec::with_capacity(size * size);
    for row in 0..size {
        let y = (row as f64 - h) * spacing;
        let rowp = geom::axpy(center, y, axes[1]);
        for col in 0..size {
            let x = (col as f64 - h) * spacing;
            let (val, ok) = v.sample_or_fill(geom::axpy(rowp, x, axes[0]));
            if !ok {
                out_of_domain += 1;
            }
            inside.push(ok);
            grid.push(val as f32);
        }
    }
    if out_of_domain == 0 {
        inside = Vec::new();
    }
    Ok(CrossSection {
        center_s: s,
        center,
        tangent: frame.tangent,
        axes,
        size,
        spacing,
        grid,
        out_of_domain,
        inside,
    })
}

/// Stack of cross-sections at uniform arclength steps between two markers.
#[derive(Clone, Debug, PartialEq)]
pub struct StraightenedVolume {
    pub step_s: f64,
    pub sections: Vec<CrossSection>,
}

impl StraightenedVolume {
    pub fn arclengths(&self) -> Vec<f64> {
        self.sections.iter().map(|s| s.center_s).collect()
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    /// Total number of out-of-domain pixels over all sections.
    pub fn out_of_domain(&self) -> usize {
        self.sections.iter().map(|s| s.out_of_domain).sum()
    }
}

/// Arclength positions `proximal, proximal + step, …`, ending exactly at `distal`.
pub fn section_positions(proximal: f64, distal: f64, step: f64) -> Vec<f64> {
    let n = ((distal - proximal) / step + 1e-9).floor() as usize;
    let mut out: Vec<f64> = (0..=n).map(|k| proximal + k as f64 * step).collect();
    if let Some(last) = out.last_mut() {
        if *last > distal {
            *last = distal;
        }
    }
    if distal - out.last().unwrap() > 1e-9 * step.max(1.0) {
        out.push(distal);
    }
    out
}

pub fn straighten(
    v: &Volume,
    c: &Centerline,
    markers: &SectionMarkers,
    params: &ReformatParams,
) -> Result<StraightenedVolume> {
    if !(params.step_s > 0.0) {
        return Err(Error::Parameter(format!("step {} must be positive", params.step_s)));
    }
    let total = c.total_length();
    if !(markers.proximal_s >= 0.0 && markers.proximal_s < markers.distal_s && markers.distal_s <= total + 1e-9) {
        return Err(Error::Parameter(format!(
            "markers [{}, {}] invalid for centerline of length {total}",
            markers.proximal_s, markers.distal_s
        )));
    }
    let sections = section_positions(markers.proximal_s, markers.distal_s.min(total), params.step_s)
        .into_iter()
        .map(|s| cross_section(v, c, s, params.extent, params.spacing))
        .collect::<Result<Vec<_>>>()?;
    Ok(StraightenedVolume {
        step_s: params.step_s,
        sections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{make_phantom, PhantomKind, PhantomSpec};
    use crate::volume::FILL_HU;
    use proptest::prelude::*;

    fn tube() -> (crate::phantom::Phantom, Centerline) {
        let ph = make_phantom(&PhantomSpec {
            dims: [40, 40, 40],
            spacing: [0.4; 3],
            ..PhantomSpec::new(PhantomKind::StraightTube)
        })
        .unwrap();
        let cl = Centerline::new("c", ph.truth.centerline(0.5), None).unwrap();
        (ph, cl)
    }

    #[test]
    fn center_pixel_is_the_centerline_sample() {
        let (ph, cl) = tube();
        let cs = cross_section(&ph.volume, &cl, 5.3, 8.0, 0.1).unwrap();
        let h = (cs.size - 1) / 2;
        let want = ph.volume.sample_trilinear(cl.point_at(5.3)).unwrap();
        assert!((cs.pixel(h, h) as f64 - want).abs() < 1e-3);
        for a in cs.axes {
            assert!(geom::dot(a, cs.tangent).abs() < 1e-6);
            assert!((geom::norm(a) - 1.0).abs() < 1e-6);
        }
        assert!(geom::dot(cs.axes[0], cs.axes[1]).abs() < 1e-6);
    }

    #[test]
    fn lumen_disk_area_and_centering() {
        let (ph, cl) = tube();
        let r = ph.truth.lumen_radius;
        let m = SectionMarkers::new(&cl, 2.0, cl.total_length() - 2.0).unwrap();
        let sv = straighten(&ph.volume, &cl, &m, &ReformatParams { extent: 8.0, ..Default::default() }).unwrap();
        let mid = (350.0 + -50.0) / 2.0;
        for cs in &sv.sections {
            let h = (cs.size - 1) as f64 / 2.0;
            let (mut n, mut cx, mut cy) = (0usize, 0.0, 0.0);
            for row in 0..cs.size {
                for col in 0..cs.size {
                    if cs.pixel(col, row) as f64 > mid {
                        n += 1;
                        cx += col as f64;
                        cy += row as f64;
                    }
                }
            }
            let area = n as f64 * cs.spacing * cs.spacing;
            let want = std::f64::consts::PI * r * r;
            assert!((area - want).abs() <= 0.05 * want, "{area} vs {want}");
            assert!((cx / n as f64 - h).abs() <= 1.0 && (cy / n as f64 - h).abs() <= 1.0);
        }
    }

    #[test]
    fn section_counts() {
        assert_eq!(section_positions(0.0, 10.0, 0.5).len(), 21);
        assert_eq!(section_positions(0.0, 10.0, 12.0), vec![0.0, 10.0]);
        let p = section_positions(1.0, 3.2, 0.5);
        assert_eq!(p.len(), 6);
        assert_eq!(*p.last().unwrap(), 3.2);
    }

    #[test]
    fn out_of_domain_pixels_are_filled_and_counted() {
        let (ph, cl) = tube();
        let cs = cross_section(&ph.volume, &cl, 1.0, 30.0, 0.5).unwrap();
        assert!(cs.out_of_domain > 0);
        assert_eq!(cs.pixel(0, 0), -1024.0);
        assert!(matches!(
            cross_section(&ph.volume, &cl, cl.total_length() + 1.0, 10.0, 0.5),
            Err(Error::ArclengthOutOfRange { .. })
        ));
    }

    #[test]
    fn payload_round_trip() {
        let (ph, cl) = tube();
        let cs = cross_section(&ph.volume, &cl, 4.0, 4.0, 0.2).unwrap();
        let (h, px) = parse_payload(&cs.to_payload()).unwrap();
        assert_eq!((h.width, h.height), (cs.size, cs.size));
        assert_eq!(h.center_s, 4.0);
        for (a, b) in px.iter().zip(&cs.grid) {
            assert!((*a as f32 - b).abs() <= 0.5);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn pixels_stay_within_source_voxel_range(seed in 0u64..1000, s in 0.0f64..1.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data = (0..12 * 12 * 12).map(|_| rng.random_range(-1000i16..2000)).collect();
            let v = Volume::new([12, 12, 12], [0.7, 0.9, 1.1], [1.0, -2.0, 0.5], data).unwrap();
            let pts: Vec<Vec3> = (0..6)
                .map(|i| v.voxel_to_world([2.0 + i as f64 * 1.4, 4.0 + rng.random::<f64>(), 3.0 + i as f64]))
                .collect();
            let cl = Centerline::new("c", pts, None).unwrap();
            let cs = cross_section(&v, &cl, s * cl.total_length(), 6.0, 0.37).unwrap();
            let h = (cs.size - 1) as f64 / 2.0;
            for row in 0..cs.size {
                for col in 0..cs.size {
                    let p = cs.world_at((col as f64 - h) * cs.spacing, (row as f64 - h) * cs.spacing);
                    let g = cs.pixel(col, row) as f64;
                    match v.neighborhood_range(p) {
                        Some((lo, hi)) => prop_assert!(g >= lo - 1e-3 && g <= hi + 1e-3),
                        None => prop_assert_eq!(g, FILL_HU),
                    }
                }
            }
        }
    }
}
