//! Outer wall: first crossing of a self-normalized edge response beyond the lumen.

use serde::{Deserialize, Serialize};

use super::mrf::{solve_cyclic_mrf, MrfProblem, DEFAULT_LAMBDA};
use super::{PolarParams, WallKind, WallSurface};
use crate::error::{Error, Result};
use crate::reformat::{CrossSection, StraightenedVolume};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterParams {
    pub polar: PolarParams,
    /// Normalized edge threshold in `[0, 1]`.
    pub threshold: f64,
    pub lambda: f64,
    /// Search starts this far outside the lumen boundary (mm).
    pub gap: f64,
    /// Outer limit of the band (beyond the lumen) used to learn the wall level (mm).
    pub band: f64,
    /// Wall thickness used when no ray in a section crosses the threshold (mm).
    pub fallback_thickness: f64,
}

pub const DEFAULT_THRESHOLD: f64 = 0.3;

impl Default for OuterParams {
    fn default() -> Self {
        Self {
            polar: PolarParams::default(),
            threshold: DEFAULT_THRESHOLD,
            lambda: DEFAULT_LAMBDA,
            gap: 0.2,
            band: 1.0,
            fallback_thickness: 1.0,
        }
    }
}

/// Per-section edge responses beyond the lumen.
struct SectionResponse {
    /// `resp[i][k]` is the normalized response at radius `start[i] + (k + 1)·dr`.
    resp: Vec<Vec<f64>>,
    start: Vec<f64>,
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn section_response(cs: &CrossSection, inner: &[f64], p: &OuterParams) -> SectionResponse {
    let n = inner.len();
    let dr = p.polar.dr;
    let rmax = p.polar.max_radius();
    let dirs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let (s, c) = (std::f64::consts::TAU * i as f64 / n as f64).sin_cos();
            (c, s)
        })
        .collect();
    // rays stop at the volume border and hold the value there
    let limit: Vec<f64> = dirs
        .iter()
        .map(|(c, s)| {
            let mut r = 0.0;
            while r + dr <= rmax && cs.sample_valid((r + dr) * c, (r + dr) * s).is_some() {
                r += dr;
            }
            r
        })
        .collect();
    let profile = |i: usize, r: f64| {
        let r = r.min(limit[i]);
        cs.sample(r * dirs[i].0, r * dirs[i].1)
    };
    // wall level learned from the band just outside the lumen
    let mut band = Vec::new();
    for i in 0..n {
        let mut r = inner[i] + p.gap;
        while r <= inner[i] + p.band + 1e-9 && r <= rmax {
            band.push(profile(i, r));
            r += dr;
        }
    }
    let level = median(&mut band).unwrap_or(f64::INFINITY);
    let clamped = |i: usize, r: f64| profile(i, r).min(level);
    let mut resp = Vec::with_capacity(n);
    let mut start = Vec::with_capacity(n);
    let mut max = 0.0f64;
    for i in 0..n {
        let r0 = inner[i] + p.gap;
        let mut row = Vec::new();
        let mut k = 1;
        loop {
            let r = r0 + k as f64 * dr;
            if r + dr > rmax + 1e-9 {
                break;
            }
            let g = ((clamped(i, r + dr) - clamped(i, r - dr)) / (2.0 * dr)).abs();
            max = max.max(g);
            row.push(g);
            k += 1;
        }
        resp.push(row);
        start.push(r0);
    }
    if max > 0.0 {
        for row in &mut resp {
            for g in row.iter_mut() {
                *g /= max;
            }
        }
    }
    SectionResponse { resp, start }
}

/// Index of the first response at or above `t` on a ray with any positive response.
fn first_crossing(row: &[f64], t: f64) -> Option<usize> {
    if !row.iter().any(|g| *g > 0.0) {
        return None;
    }
    row.iter().position(|g| *g >= t)
}

/// First-crossing radii before any refinement or smoothing.
#[derive(Clone, Debug, PartialEq)]
pub struct RawOuter {
    /// `radii[section][ray]`, `None` where the response never reaches the threshold.
    pub radii: Vec<Vec<Option<f64>>>,
}

fn check(sv: &StraightenedVolume, inner: &WallSurface, p: &OuterParams) -> Result<()> {
    p.polar.validate()?;
    inner.check_shape()?;
    if !(0.0..=1.0).contains(&p.threshold) {
        return Err(Error::Parameter(format!("threshold {} outside [0, 1]", p.threshold)));
    }
    if inner.n_sections() != sv.len() || inner.angles_n != p.polar.n_rays {
        return Err(Error::Parameter("inner surface does not match the sections".into()));
    }
    Ok(())
}

/// Raw outer radius per ray: the first radius beyond `inner + gap` where the
/// normalized edge response reaches the threshold.
pub fn raw_outer_radii(sv: &StraightenedVolume, inner: &WallSurface, p: &OuterParams) -> Result<RawOuter> {
    check(sv, inner, p)?;
    let dr = p.polar.dr;
    let radii = sv
        .sections
        .iter()
        .zip(&inner.radii)
        .map(|(cs, inn)| {
            let r = section_response(cs, inn, p);
            r.resp
                .iter()
                .zip(&r.start)
                .map(|(row, s)| first_crossing(row, p.threshold).map(|k| s + (k + 1) as f64 * dr))
                .collect()
        })
        .collect();
    Ok(RawOuter { radii })
}

/// Outer wall surface.
///
/// After the first crossing, each ray climbs to the local maximum of its edge
/// response so the boundary sits on the edge rather than its flank. Rays
/// without a crossing take the section's median wall thickness. A cyclic MRF
/// pass then smooths each section and the result is clamped to the lumen.
pub fn segment_outer_wall(sv: &StraightenedVolume, inner: &WallSurface, p: &OuterParams) -> Result<WallSurface> {
    check(sv, inner, p)?;
    let dr = p.polar.dr;
    let n_labels = p.polar.n_radii;
    let rmax = p.polar.max_radius();
    let mut radii = Vec::with_capacity(sv.len());
    for (cs, inn) in sv.sections.iter().zip(&inner.radii) {
        let r = section_response(cs, inn, p);
        let mut located: Vec<Option<f64>> = Vec::with_capacity(inn.len());
        for (row, s) in r.resp.iter().zip(&r.start) {
            located.push(first_crossing(row, p.threshold).map(|mut k| {
                while k + 1 < row.len() && row[k + 1] > row[k] {
                    k += 1;
                }
                s + (k + 1) as f64 * dr
            }));
        }
        let mut thick: Vec<f64> = located
            .iter()
            .zip(inn)
            .filter_map(|(o, i)| o.map(|o| o - i))
            .collect();
        let fallback = median(&mut thick).unwrap_or(p.fallback_thickness);
        let raw: Vec<f64> = located
            .iter()
            .zip(inn)
            .map(|(o, i)| o.unwrap_or(i + fallback))
            .collect();
        let mut unary = Vec::with_capacity(raw.len() * n_labels);
        for r in &raw {
            let target = r / dr;
            for j in 0..n_labels {
                let d = j as f64 - target;
                unary.push(d * d);
            }
        }
        let labels = solve_cyclic_mrf(&MrfProblem::new(raw.len(), n_labels, unary, p.lambda)?);
        radii.push(
            labels
                .iter()
                .zip(inn)
                .map(|(&l, &i)| (l as f64 * dr).max(i).min(rmax.max(i)))
                .collect(),
        );
    }
    Ok(WallSurface {
        kind: WallKind::Outer,
        step_s: inner.step_s,
        angles_n: inner.angles_n,
        radii,
        section_s: inner.section_s.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centerline::{Centerline, SectionMarkers};
    use crate::phantom::{make_phantom, PhantomKind, PhantomSpec};
    use crate::reformat::{straighten, ReformatParams};
    use crate::wall::{segment_inner_wall, InnerParams};

    fn plaque_tube() -> (StraightenedVolume, WallSurface) {
        let ph = make_phantom(&PhantomSpec {
            dims: [48, 48, 30],
            spacing: [0.4; 3],
            ..PhantomSpec::new(PhantomKind::PlaqueTube)
        })
        .unwrap();
        let cl = Centerline::new("c", ph.truth.centerline(0.5), None).unwrap();
        let m = SectionMarkers::new(&cl, 3.0, 8.0).unwrap();
        let sv = straighten(&ph.volume, &cl, &m, &ReformatParams::default()).unwrap();
        let inner = segment_inner_wall(&sv, &InnerParams::default()).unwrap().surface;
        (sv, inner)
    }

    #[test]
    fn outer_radius_matches_wall_ring() {
        let (sv, inner) = plaque_tube();
        let outer = segment_outer_wall(&sv, &inner, &OuterParams::default()).unwrap();
        let err = outer.radii.iter().flatten().map(|r| (r - 3.0).abs()).sum::<f64>()
            / (outer.n_sections() * outer.angles_n) as f64;
        assert!(err <= 0.25, "mean error {err}");
        for (o, i) in outer.radii.iter().flatten().zip(inner.radii.iter().flatten()) {
            assert!(o >= i);
        }
    }

    #[test]
    fn raw_radii_limits_and_monotonicity() {
        let (sv, inner) = plaque_tube();
        let at = |t: f64| {
            raw_outer_radii(&sv, &inner, &OuterParams { threshold: t, ..Default::default() }).unwrap()
        };
        let zero = at(0.0);
        for (k, row) in zero.radii.iter().enumerate() {
            for (i, r) in row.iter().enumerate() {
                let want = inner.radii[k][i] + 0.2 + 0.1;
                assert!((r.unwrap() - want).abs() < 1e-9);
            }
        }
        let ts = [0.0, 0.1, 0.3, 0.5, 0.8, 1.0];
        let runs: Vec<RawOuter> = ts.iter().map(|t| at(*t)).collect();
        for w in runs.windows(2) {
            for (a, b) in w[0].radii.iter().flatten().zip(w[1].radii.iter().flatten()) {
                // a later first crossing, or none at all, as the threshold rises
                match (a, b) {
                    (Some(a), Some(b)) => assert!(b >= a),
                    (None, Some(_)) => panic!("crossing appeared at a higher threshold"),
                    _ => {}
                }
            }
        }
        assert!(matches!(
            raw_outer_radii(&sv, &inner, &OuterParams { threshold: 1.5, ..Default::default() }),
            Err(Error::Parameter(_))
        ));
    }
}
