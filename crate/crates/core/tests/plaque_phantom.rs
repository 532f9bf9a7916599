use std::f64::consts::PI;

use coroplaq_core::centerline::{Centerline, SectionMarkers};
use coroplaq_core::phantom::{make_phantom, Phantom, PhantomKind, PhantomSpec};
use coroplaq_core::plaque::{build_plaque_region, composition_histogram, stenosis_and_remodeling, CompositionThresholds};
use coroplaq_core::reformat::{straighten, ReformatParams};
use coroplaq_core::tube::{collect_voxels, collect_voxels_exhaustive, TubeFrames};
use coroplaq_core::wall::{segment_inner_wall, segment_outer_wall, InnerParams, OuterParams, WallKind, WallSurface};
use coroplaq_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn phantom(kind: PhantomKind, dims: [usize; 3]) -> Phantom {
    make_phantom(&PhantomSpec {
        dims,
        spacing: [0.4; 3],
        ..PhantomSpec::new(kind)
    })
    .unwrap()
}

fn constant_surface(kind: WallKind, r: f64, section_s: Vec<f64>) -> WallSurface {
    WallSurface {
        kind,
        step_s: 0.5,
        angles_n: 72,
        radii: vec![vec![r; 72]; section_s.len()],
        section_s,
    }
}

fn segment(ph: &Phantom, p: f64, d: f64) -> (Centerline, SectionMarkers, WallSurface, WallSurface) {
    let cl = Centerline::new("c", ph.truth.centerline(0.5), None).unwrap();
    let m = SectionMarkers::new(&cl, p, d).unwrap();
    let sv = straighten(&ph.volume, &cl, &m, &ReformatParams::default()).unwrap();
    let inner = segment_inner_wall(&sv, &InnerParams::default()).unwrap().surface;
    let outer = segment_outer_wall(&sv, &inner, &OuterParams::default()).unwrap();
    (cl, m, inner, outer)
}

#[test]
fn annulus_region_volume_matches_analytic() {
    // a 1 mm annulus needs a fine grid for the lattice count to settle within 5%
    let ph = make_phantom(&PhantomSpec {
        dims: [40, 40, 90],
        spacing: [0.2; 3],
        ..PhantomSpec::new(PhantomKind::PlaqueTube)
    })
    .unwrap();
    let cl = Centerline::new("c", ph.truth.centerline(0.5), None).unwrap();
    let m = SectionMarkers::new(&cl, 3.0, 15.0).unwrap();
    let s: Vec<f64> = (0..=24).map(|k| 3.0 + 0.5 * k as f64).collect();
    let inner = constant_surface(WallKind::Inner, 2.0, s.clone());
    let outer = constant_surface(WallKind::Outer, 3.0, s);
    let region = build_plaque_region(&ph.volume, &cl, &inner, &outer, &m, "L1").unwrap();
    let want = PI * (9.0 - 4.0) * 12.0;
    let got = region.volume_mm3();
    assert!((got - want).abs() <= 0.05 * want, "{got} vs {want}");
    // every voxel is wall tissue in this phantom
    let comp = composition_histogram(&region, &ph.volume, &CompositionThresholds::default()).unwrap();
    assert_eq!(comp.counts.total() as usize, region.voxels.len());
}

#[test]
fn segmented_annulus_region_volume() {
    let ph = phantom(PhantomKind::PlaqueTube, [48, 48, 50]);
    let (cl, m, inner, outer) = segment(&ph, 3.0, 15.0);
    let region = build_plaque_region(&ph.volume, &cl, &inner, &outer, &m, "L1").unwrap();
    let want = PI * (9.0 - 4.0) * 12.0;
    let got = region.volume_mm3();
    assert!((got - want).abs() <= 0.1 * want, "{got} vs {want}");
}

#[test]
fn zero_thickness_wall_is_empty() {
    let ph = phantom(PhantomKind::PlaqueTube, [32, 32, 32]);
    let cl = Centerline::new("c", ph.truth.centerline(0.5), None).unwrap();
    let m = SectionMarkers::new(&cl, 2.0, 8.0).unwrap();
    let s: Vec<f64> = (0..=12).map(|k| 2.0 + 0.5 * k as f64).collect();
    let w = constant_surface(WallKind::Inner, 2.5, s);
    let region = build_plaque_region(&ph.volume, &cl, &w, &w, &m, "L").unwrap();
    assert!(region.voxels.is_empty());
    let far = SectionMarkers::new(&cl, 2.0, 10.0).unwrap();
    assert!(matches!(
        build_plaque_region(&ph.volume, &cl, &w, &w, &far, "L"),
        Err(Error::Coverage { .. })
    ));
}

#[test]
fn membership_matches_brute_force_on_curved_crop() {
    let ph = make_phantom(&PhantomSpec {
        dims: [32, 32, 32],
        spacing: [0.4; 3],
        major_radius: 8.0,
        ..PhantomSpec::new(PhantomKind::CurvedTube)
    })
    .unwrap();
    let cl = Centerline::new("c", ph.truth.centerline(0.5), None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = (cl.total_length() / 0.5) as usize;
    let section_s: Vec<f64> = (0..=n).map(|k| 0.5 * k as f64).collect();
    let inner_r: Vec<Vec<f64>> = section_s
        .iter()
        .map(|_| (0..72).map(|_| rng.random_range(1.0..2.5)).collect())
        .collect();
    let outer_r: Vec<Vec<f64>> = inner_r
        .iter()
        .map(|row| row.iter().map(|r| r + rng.random_range(0.0..1.5)).collect())
        .collect();
    let inner = WallSurface {
        kind: WallKind::Inner,
        step_s: 0.5,
        angles_n: 72,
        radii: inner_r,
        section_s: section_s.clone(),
    };
    let outer = WallSurface {
        kind: WallKind::Outer,
        radii: outer_r,
        ..inner.clone()
    };
    let (p, d) = (1.3, section_s[n] - 1.1);
    let m = SectionMarkers::new(&cl, p, d).unwrap();
    let region = build_plaque_region(&ph.volume, &cl, &inner, &outer, &m, "L").unwrap();
    let tube = TubeFrames::new(&cl, &inner);
    let member = |tc: &coroplaq_core::tube::TubeCoords| {
        inner.radius_at(tc.section, tc.theta) <= tc.r && tc.r < outer.radius_at(tc.section, tc.theta)
    };
    let oracle = collect_voxels_exhaustive(&ph.volume, &tube, 0.5, (p, d), member);
    assert!(!oracle.is_empty());
    assert_eq!(region.voxels, oracle);
    let reach = vec![4.0; section_s.len()];
    assert_eq!(collect_voxels(&ph.volume, &tube, 0.5, (p, d), &reach, member), oracle);
}

#[test]
fn healthy_tube_has_no_stenosis() {
    let ph = phantom(PhantomKind::PlaqueTube, [48, 48, 50]);
    let (_, m, inner, outer) = segment(&ph, 3.0, 16.0);
    let r = stenosis_and_remodeling(&inner, &outer, &m).unwrap();
    assert!(r.stenosis_area_pct <= 5.0, "{}", r.stenosis_area_pct);
    assert!((r.remodeling_index - 1.0).abs() <= 0.05, "{}", r.remodeling_index);
}

#[test]
fn half_area_stenosis_is_measured() {
    let ph = phantom(PhantomKind::StenosedTube, [40, 40, 64]);
    let c = ph.truth.stenosis_center;
    let (_, m, inner, outer) = segment(&ph, c - 8.0, c + 8.0);
    let r = stenosis_and_remodeling(&inner, &outer, &m).unwrap();
    assert!((r.stenosis_area_pct - 50.0).abs() <= 5.0, "{}", r.stenosis_area_pct);
}

#[test]
fn threshold_changes_preserve_total() {
    let mut spec = PhantomSpec {
        dims: [40, 40, 40],
        spacing: [0.4; 3],
        ..PhantomSpec::new(PhantomKind::PlaqueTube)
    };
    spec.noise_sigma = 40.0;
    let ph = make_phantom(&spec).unwrap();
    let cl = Centerline::new("c", ph.truth.centerline(0.5), None).unwrap();
    let m = SectionMarkers::new(&cl, 2.0, 12.0).unwrap();
    let s: Vec<f64> = (0..=20).map(|k| 2.0 + 0.5 * k as f64).collect();
    let region = build_plaque_region(
        &ph.volume,
        &cl,
        &constant_surface(WallKind::Inner, 2.0, s.clone()),
        &constant_surface(WallKind::Outer, 3.0, s),
        &m,
        "L",
    )
    .unwrap();
    let base = composition_histogram(&region, &ph.volume, &CompositionThresholds::default()).unwrap();
    for (a, b) in [(-50.0, 10.0), (0.0, 60.0), (45.0, 300.0), (60.5, 61.0)] {
        let t = CompositionThresholds::new(a, b).unwrap();
        let c = composition_histogram(&region, &ph.volume, &t).unwrap();
        assert_eq!(c.counts.total(), base.counts.total());
        assert_eq!(c.total_mm3, base.total_mm3);
        // oracle: classify each voxel directly
        let mut want = [0u64; 3];
        for &i in &region.voxels {
            let hu = ph.volume.data()[i] as f64;
            want[if hu < a { 0 } else if hu < b { 1 } else { 2 }] += 1;
        }
        assert_eq!([c.counts.lipid_rich, c.counts.fibrotic, c.counts.calcified], want);
    }
}
