use std::f64::consts::PI;

use coroplaq_core::centerline::{Centerline, SectionMarkers};
use coroplaq_core::perivascular::{build_fat_roi, fat_stats, RoiWidth};
use coroplaq_core::phantom::{make_phantom, Phantom, PhantomKind, PhantomSpec};
use coroplaq_core::plaque::build_plaque_region;
use coroplaq_core::reformat::{straighten, ReformatParams};
use coroplaq_core::tube::{collect_voxels_exhaustive, TubeFrames};
use coroplaq_core::wall::{segment_inner_wall, segment_outer_wall, InnerParams, OuterParams, WallKind, WallSurface};
use coroplaq_core::Volume;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Segmented {
    ph: Phantom,
    cl: Centerline,
    inner: WallSurface,
    outer: WallSurface,
}

fn fat_collar(range: (f64, f64)) -> Segmented {
    let ph = make_phantom(&PhantomSpec {
        dims: [56, 56, 40],
        spacing: [0.4; 3],
        fat_radius: Some(10.0),
        ..PhantomSpec::new(PhantomKind::FatCollarTube)
    })
    .unwrap();
    let cl = Centerline::new("c", ph.truth.centerline(0.5), Some("LAD".into())).unwrap();
    let m = SectionMarkers::new(&cl, range.0, range.1).unwrap();
    let sv = straighten(&ph.volume, &cl, &m, &ReformatParams::default()).unwrap();
    let inner = segment_inner_wall(&sv, &InnerParams::default()).unwrap().surface;
    let outer = segment_outer_wall(&sv, &inner, &OuterParams::default()).unwrap();
    Segmented { ph, cl, inner, outer }
}

#[test]
fn fat_shell_volume_and_mean() {
    let s = fat_collar((3.0, 13.0));
    let roi = build_fat_roi(&s.ph.volume, &s.cl, &s.outer, RoiWidth::Manual { mm: 6.0 }, (3.0, 13.0)).unwrap();
    assert_eq!(roi.branch_label.as_deref(), Some("LAD"));
    let want = PI * (81.0 - 9.0) * 10.0;
    let got = roi.volume_mm3();
    assert!((got - want).abs() <= 0.05 * want, "{got} vs {want}");
    let stats = fat_stats(&roi, &s.ph.volume);
    let mean = stats.mean_hu.unwrap();
    assert!((mean + 100.0).abs() <= 1.0, "{mean}");
    assert!(stats.in_window_voxels <= stats.total_voxels);

    // a hair-thin shell holds at most one layer of voxels
    let thin = build_fat_roi(&s.ph.volume, &s.cl, &s.outer, RoiWidth::Manual { mm: 0.1 }, (3.0, 13.0)).unwrap();
    let layer = 2.0 * PI * 3.1 * 10.0 * 0.4;
    assert!(thin.volume_mm3() <= layer, "{} vs {layer}", thin.volume_mm3());

    // widening never drops voxels
    let mut prev: Vec<usize> = Vec::new();
    for w in [0.5, 1.0, 2.0, 4.0, 6.0] {
        let r = build_fat_roi(&s.ph.volume, &s.cl, &s.outer, RoiWidth::Manual { mm: w }, (3.0, 13.0)).unwrap();
        assert!(prev.iter().all(|i| r.voxels.binary_search(i).is_ok()), "width {w}");
        assert!(r.voxels.len() > prev.len());
        prev = r.voxels;
    }
}

#[test]
fn fat_roi_and_plaque_region_are_disjoint() {
    let s = fat_collar((3.0, 13.0));
    let m = SectionMarkers::new(&s.cl, 3.0, 13.0).unwrap();
    let plaque = build_plaque_region(&s.ph.volume, &s.cl, &s.inner, &s.outer, &m, "L1").unwrap();
    let roi = build_fat_roi(&s.ph.volume, &s.cl, &s.outer, RoiWidth::Auto, (3.0, 13.0)).unwrap();
    assert!(!plaque.voxels.is_empty() && !roi.voxels.is_empty());
    assert!(plaque.voxels.iter().all(|i| roi.voxels.binary_search(i).is_err()));
    // auto width is the outer diameter, about 6 mm here
    let manual = build_fat_roi(&s.ph.volume, &s.cl, &s.outer, RoiWidth::Manual { mm: 6.0 }, (3.0, 13.0)).unwrap();
    let ratio = roi.volume_mm3() / manual.volume_mm3();
    assert!((ratio - 1.0).abs() < 0.1, "{ratio}");
}

#[test]
fn mixed_shell_mean() {
    let s = fat_collar((3.0, 13.0));
    let roi = build_fat_roi(&s.ph.volume, &s.cl, &s.outer, RoiWidth::Manual { mm: 4.0 }, (3.0, 13.0)).unwrap();
    let mut data = s.ph.volume.data().to_vec();
    let n = roi.voxels.len() / 2 * 2;
    for (j, &i) in roi.voxels.iter().take(n).enumerate() {
        data[i] = if j % 2 == 0 { -100 } else { -60 };
    }
    let v = s.ph.volume.clone();
    let mixed = Volume::new(v.dims(), v.spacing(), v.origin(), data).unwrap();
    let roi = coroplaq_core::perivascular::FatRoi {
        voxels: roi.voxels[..n].to_vec(),
        ..roi
    };
    let mean = fat_stats(&roi, &mixed).mean_hu.unwrap();
    assert!((mean + 80.0).abs() <= 1.0, "{mean}");
}

#[test]
fn membership_matches_brute_force() {
    let ph = make_phantom(&PhantomSpec {
        dims: [32, 32, 32],
        spacing: [0.4; 3],
        major_radius: 8.0,
        ..PhantomSpec::new(PhantomKind::CurvedTube)
    })
    .unwrap();
    let cl = Centerline::new("c", ph.truth.centerline(0.5), None).unwrap();
    let n = (cl.total_length() / 0.5) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let section_s: Vec<f64> = (0..=n).map(|k| 0.5 * k as f64).collect();
    let wall = WallSurface {
        kind: WallKind::Outer,
        step_s: 0.5,
        angles_n: 36,
        radii: section_s
            .iter()
            .map(|_| (0..36).map(|_| rng.random_range(1.5..3.0)).collect())
            .collect(),
        section_s: section_s.clone(),
    };
    let tube = TubeFrames::new(&cl, &wall);
    let range = (0.7, section_s[n] - 0.9);
    for width in [RoiWidth::Manual { mm: 2.5 }, RoiWidth::Auto] {
        let roi = build_fat_roi(&ph.volume, &cl, &wall, width, range).unwrap();
        let oracle = collect_voxels_exhaustive(&ph.volume, &tube, 0.5, range, |tc| {
            let rw = wall.radius_at(tc.section, tc.theta);
            let w = match width {
                RoiWidth::Manual { mm } => mm,
                RoiWidth::Auto => 2.0 * wall.radii[tc.section].iter().sum::<f64>() / 36.0,
            };
            rw < tc.r && tc.r <= rw + w
        });
        assert!(!oracle.is_empty());
        assert_eq!(roi.voxels, oracle);
    }
}
