//! Acceptance gate: each criterion runs at its stated tolerance and prints one
//! PASS/FAIL line. Exits non-zero when any criterion fails.

mod common;

use std::f64::consts::{PI, TAU};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use coroplaq_core::centerline::{extract_centerline_two_seeds, Centerline, ExtractionParams, SectionMarkers};
use coroplaq_core::dual_energy::{de_composition, de_index, register_rigid, DePair, DeThresholds, RegistrationParams};
use coroplaq_core::perivascular::{auto_branch_rois, build_fat_roi, fat_stats, BranchWalls, RoiWidth};
use coroplaq_core::phantom::{make_phantom, Phantom, PhantomKind, PhantomSpec, PlaqueComponent, Sphere};
use coroplaq_core::plaque::{
    build_plaque_region, composition_histogram, stenosis_and_remodeling, CompositionThresholds, PlaqueRegion,
};
use coroplaq_core::reformat::{straighten, ReformatParams};
use coroplaq_core::wall::{
    apply_rbf_correction, raw_outer_radii, segment_inner_wall, segment_outer_wall, solve_cyclic_mrf, wendland_c2,
    EditConstraint, InnerParams, MrfProblem, OuterParams, WallKind, WallSurface,
};
use coroplaq_core::Volume;
use coroplaq_service::persist::to_bytes;
use coroplaq_service::{run_pipeline, Command, PipelineConfig, Session};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn spec(kind: PhantomKind, dims: [usize; 3], spacing: f64) -> PhantomSpec {
    PhantomSpec {
        dims,
        spacing: [spacing; 3],
        ..PhantomSpec::new(kind)
    }
}

/// Analytic centerline, straightened section and both walls over `[p, d]`.
fn segmented(ph: &Phantom, p: f64, d: f64) -> (SectionMarkers, WallSurface, WallSurface) {
    let cl = Centerline::new("c", ph.truth.centerline(0.5), None).unwrap();
    let m = SectionMarkers::new(&cl, p, d).unwrap();
    let sv = straighten(&ph.volume, &cl, &m, &ReformatParams::default()).unwrap();
    let inner = segment_inner_wall(&sv, &InnerParams::default()).unwrap().surface;
    let outer = segment_outer_wall(&sv, &inner, &OuterParams::default()).unwrap();
    (m, inner, outer)
}

fn mean_abs(radii: &[Vec<f64>], want: f64) -> f64 {
    let n: usize = radii.iter().map(Vec::len).sum();
    radii.iter().flatten().map(|r| (r - want).abs()).sum::<f64>() / n as f64
}

fn centerline_accuracy() -> Check {
    let voxel = 0.4;
    let mut straight = spec(PhantomKind::StraightTube, [256; 3], voxel);
    straight.axis = [0.3, 0.2, 1.0];
    let mut curved = spec(PhantomKind::CurvedTube, [256; 3], voxel);
    curved.major_radius = 40.0;
    curved.axis = [0.1, 0.2, 1.0];
    let mut out = Vec::new();
    for (name, mut s) in [("straight", straight), ("curved", curved)] {
        s.noise_sigma = 10.0;
        let ph = make_phantom(&s).map_err(|e| e.to_string())?;
        let t = &ph.truth;
        let start = Instant::now();
        let ex = extract_centerline_two_seeds(
            &ph.volume,
            t.axis.point_at(2.0),
            t.axis.point_at(t.length() - 2.0),
            None,
            &ExtractionParams::default(),
        )
        .map_err(|e| e.to_string())?;
        let took = start.elapsed();
        let d: Vec<f64> = ex.centerline.points().iter().map(|p| t.distance_to_centerline(*p) / voxel).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let max = d.iter().cloned().fold(0.0, f64::max);
        out.push(format!("{name}: mean {mean:.3} vx, max {max:.3} vx, {:.1} s", secs(took)));
        ensure(mean <= 0.5 && max <= 1.0, || format!("{name}: mean {mean:.3} vx, max {max:.3} vx"))?;
        ensure(took <= Duration::from_secs(10), || format!("{name}: {:.1} s per 256^3", secs(took)))?;
        ensure(ex.centerline.total_length() >= t.length() - 5.0, || {
            format!("{name}: centerline covers {:.1} of {:.1} mm", ex.centerline.total_length(), t.length())
        })?;
    }
    Ok(out.join("; "))
}

/// Direct enumeration of every labelling of the cyclic chain.
fn enumerate_min(unary: &[f64], n: usize, l: usize, lambda: f64) -> f64 {
    let mut best = f64::INFINITY;
    for code in 0..l.pow(n as u32) {
        let x: Vec<usize> = (0..n).map(|i| code / l.pow(i as u32) % l).collect();
        let mut e: f64 = (0..n).map(|i| unary[i * l + x[i]]).sum();
        for i in 0..n {
            let d = x[i] as f64 - x[(i + 1) % n] as f64;
            e += lambda * d * d;
        }
        best = best.min(e);
    }
    best
}

fn mrf_optimality() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..200 {
        let n = rng.random_range(1..=5);
        let l = rng.random_range(1..=4);
        // multiples of 1/64 keep every partial sum exact
        let unary: Vec<f64> = (0..n * l).map(|_| rng.random_range(0..512) as f64 / 64.0).collect();
        let lambda = rng.random_range(0..24) as f64 / 8.0;
        let p = MrfProblem::new(n, l, unary.clone(), lambda).map_err(|e| e.to_string())?;
        let got = p.energy(&solve_cyclic_mrf(&p));
        let want = enumerate_min(&unary, n, l, lambda);
        ensure(got == want, || format!("trial {trial} (n={n}, l={l}): solver {got} vs enumeration {want}"))?;
    }
    Ok("200/200 instances equal the enumerated optimum".into())
}

fn subvoxel_lumen() -> Check {
    let mut s = spec(PhantomKind::StraightTube, [48, 48, 48], 0.4);
    s.axis = [0.3, 0.2, 1.0];
    let ph = make_phantom(&s).map_err(|e| e.to_string())?;
    let cl = Centerline::new("c", ph.truth.centerline(0.5), None).unwrap();
    let m = SectionMarkers::new(&cl, 3.0, cl.total_length() - 3.0).unwrap();
    let sv = straighten(&ph.volume, &cl, &m, &ReformatParams::default()).map_err(|e| e.to_string())?;
    let inner = segment_inner_wall(&sv, &InnerParams::default()).map_err(|e| e.to_string())?.surface;
    let err = mean_abs(&inner.radii, 2.0);
    ensure(err <= 0.2, || format!("mean radius error {err:.3} mm"))?;
    Ok(format!("mean |r - 2.0| = {err:.3} mm over {} sections", inner.radii.len()))
}

fn outer_wall() -> Check {
    let ph = make_phantom(&spec(PhantomKind::PlaqueTube, [48, 48, 48], 0.4)).map_err(|e| e.to_string())?;
    let cl = Centerline::new("c", ph.truth.centerline(0.5), None).unwrap();
    let m = SectionMarkers::new(&cl, 3.0, cl.total_length() - 3.0).unwrap();
    let sv = straighten(&ph.volume, &cl, &m, &ReformatParams::default()).map_err(|e| e.to_string())?;
    let inner = segment_inner_wall(&sv, &InnerParams::default()).map_err(|e| e.to_string())?.surface;
    let outer = segment_outer_wall(&sv, &inner, &OuterParams::default()).map_err(|e| e.to_string())?;
    let err = mean_abs(&outer.radii, 3.0);
    ensure(err <= 0.25, || format!("mean outer radius error {err:.3} mm"))?;
    let levels = [0.1, 0.3, 0.5, 0.7, 0.9];
    let runs = levels
        .iter()
        .map(|&threshold| raw_outer_radii(&sv, &inner, &OuterParams { threshold, ..OuterParams::default() }))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let mut rays = 0;
    for (w, pair) in runs.windows(2).enumerate() {
        for (k, (a, b)) in pair[0].radii.iter().zip(&pair[1].radii).enumerate() {
            for (i, (a, b)) in a.iter().zip(b).enumerate() {
                rays += 1;
                let ok = match (a, b) {
                    (Some(a), Some(b)) => b >= a,
                    (None, Some(_)) => false,
                    _ => true,
                };
                ensure(ok, || {
                    format!("section {k} ray {i}: {a:?} at {} then {b:?} at {}", levels[w], levels[w + 1])
                })?;
            }
        }
    }
    Ok(format!("mean |r - 3.0| = {err:.3} mm; {rays} ray pairs monotone over 5 levels"))
}

fn stenosis() -> Check {
    let ph = make_phantom(&spec(PhantomKind::StenosedTube, [40, 40, 64], 0.4)).map_err(|e| e.to_string())?;
    let c = ph.truth.stenosis_center;
    let (m, inner, outer) = segmented(&ph, c - 8.0, c + 8.0);
    let narrowed = stenosis_and_remodeling(&inner, &outer, &m).map_err(|e| e.to_string())?;
    let ph = make_phantom(&spec(PhantomKind::PlaqueTube, [48, 48, 50], 0.4)).map_err(|e| e.to_string())?;
    let (m, inner, outer) = segmented(&ph, 3.0, 16.0);
    let healthy = stenosis_and_remodeling(&inner, &outer, &m).map_err(|e| e.to_string())?;
    let (a, b) = (narrowed.stenosis_area_pct, healthy.stenosis_area_pct);
    ensure((a - 50.0).abs() <= 5.0, || format!("50% phantom measured {a:.2}%"))?;
    ensure(b <= 5.0, || format!("healthy tube measured {b:.2}%"))?;
    Ok(format!("50% phantom {a:.2}%, healthy {b:.2}%"))
}

fn constant_surface(kind: WallKind, r: f64, section_s: &[f64]) -> WallSurface {
    WallSurface {
        kind,
        step_s: 0.5,
        angles_n: 72,
        radii: vec![vec![r; 72]; section_s.len()],
        section_s: section_s.to_vec(),
    }
}

fn composition() -> Check {
    let mut s = spec(PhantomKind::PlaqueTube, [40, 40, 40], 0.4);
    s.noise_sigma = 30.0;
    s.components = vec![
        PlaqueComponent {
            name: "lipid".into(),
            hu: 20.0,
            hu_high: None,
            theta_start_deg: 0.0,
            theta_end_deg: 100.0,
        },
        PlaqueComponent {
            name: "calc".into(),
            hu: 600.0,
            hu_high: None,
            theta_start_deg: 180.0,
            theta_end_deg: 240.0,
        },
    ];
    let ph = make_phantom(&s).map_err(|e| e.to_string())?;
    let cl = Centerline::new("c", ph.truth.centerline(0.5), None).unwrap();
    let m = SectionMarkers::new(&cl, 2.0, 12.0).unwrap();
    let ss: Vec<f64> = (0..=20).map(|k| 2.0 + 0.5 * k as f64).collect();
    let region = build_plaque_region(
        &ph.volume,
        &cl,
        &constant_surface(WallKind::Inner, 2.0, &ss),
        &constant_surface(WallKind::Outer, 3.0, &ss),
        &m,
        "L",
    )
    .map_err(|e| e.to_string())?;
    let base = composition_histogram(&region, &ph.volume, &CompositionThresholds::default()).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for (a, b) in [(30.0, 130.0), (-50.0, 10.0), (0.0, 60.0), (45.0, 300.0), (60.5, 61.0), (100.0, 101.0)] {
        let t = CompositionThresholds::new(a, b).map_err(|e| e.to_string())?;
        let c = composition_histogram(&region, &ph.volume, &t).map_err(|e| e.to_string())?;
        let mut want = [0u64; 3];
        for &i in &region.voxels {
            let hu = ph.volume.data()[i] as f64;
            want[if hu < a { 0 } else if hu < b { 1 } else { 2 }] += 1;
        }
        let got = [c.counts.lipid_rich, c.counts.fibrotic, c.counts.calcified];
        ensure(got == want, || format!("thresholds ({a}, {b}): counts {got:?} vs enumeration {want:?}"))?;
        ensure(c.counts.total() == base.counts.total() && c.total_mm3 == base.total_mm3, || {
            format!("thresholds ({a}, {b}): total {} mm3 vs {} mm3", c.total_mm3, base.total_mm3)
        })?;
        checked += 1;
    }
    Ok(format!(
        "{} voxels, {checked} threshold pairs match enumeration, total {} mm3 unchanged",
        region.voxels.len(),
        base.total_mm3
    ))
}

fn de_spec(shift: [f64; 3]) -> PhantomSpec {
    let mut s = spec(PhantomKind::DePair, [64, 64, 64], 0.5);
    s.high_shift = shift;
    s.spheres = vec![
        Sphere {
            center: [8.0, 9.0, 10.0],
            radius: 3.0,
            hu: 600.0,
            hu_high: Some(550.0),
        },
        Sphere {
            center: [24.0, 12.0, 20.0],
            radius: 2.5,
            hu: 300.0,
            hu_high: Some(200.0),
        },
        Sphere {
            center: [12.0, 24.0, 24.0],
            radius: 3.5,
            hu: 200.0,
            hu_high: Some(160.0),
        },
    ];
    s
}

fn dual_energy() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for trial in 0..10 {
        let shift = [0; 3].map(|_| rng.random_range(-8.0..=8.0));
        let ph = make_phantom(&de_spec(shift)).map_err(|e| e.to_string())?;
        let high = ph.companion.as_ref().unwrap();
        let r = register_rigid(&ph.volume, high, &RegistrationParams::default()).map_err(|e| e.to_string())?;
        // high-kV content sits at x + shift; the transform must map it back onto x
        for probe in [[16.0; 3], [8.0, 9.0, 10.0], [24.0, 12.0, 20.0]] {
            let moved = r.transform.apply([probe[0] + shift[0], probe[1] + shift[1], probe[2] + shift[2]]);
            for a in 0..3 {
                let e = (moved[a] - probe[a]).abs();
                worst = worst.max(e);
                ensure(e <= 0.25, || format!("trial {trial} shift {shift:?}: axis {a} off by {e:.3} mm"))?;
            }
        }
    }
    let dei = de_index(100.0, 50.0).map_err(|e| e.to_string())?;
    ensure(dei == 50.0 / 2150.0, || format!("DEI(100, 50) = {dei}"))?;

    let mut s = de_spec([0.6, -0.4, 0.0]);
    s.noise_sigma = 15.0;
    s.components = vec![PlaqueComponent {
        name: "lipid".into(),
        hu: 40.0,
        hu_high: Some(45.0),
        theta_start_deg: 0.0,
        theta_end_deg: 150.0,
    }];
    let ph = make_phantom(&s).map_err(|e| e.to_string())?;
    let (low, high) = (&ph.volume, ph.companion.as_ref().unwrap());
    let reg = register_rigid(low, high, &RegistrationParams::default()).map_err(|e| e.to_string())?;
    let pair = DePair {
        low,
        high,
        transform: reg.transform.clone(),
    };
    let mut voxels: Vec<usize> =
        (0..low.len()).filter(|&i| ph.truth.distance_to_centerline(low.center_of(i)) < 3.5).collect();
    voxels.push(low.index(63, 63, 0));
    voxels.sort_unstable();
    let region = PlaqueRegion {
        lesion_id: "L".into(),
        voxels,
        voxel_volume: low.voxel_volume(),
    };
    for t in [DeThresholds::default(), DeThresholds { calc_threshold: 250.0, dei_threshold: 0.02 }] {
        let got = de_composition(&region, &pair, &t).map_err(|e| e.to_string())?;
        let mut want = [0u64; 3];
        let mut excluded = 0;
        for &i in &region.voxels {
            let l = low.data()[i] as f64;
            let Ok(h) = high.sample_trilinear(pair.transform.apply_inverse(low.center_of(i))) else {
                excluded += 1;
                continue;
            };
            let (lc, hc) = (l.clamp(-1000.0, 3071.0), h.clamp(-1000.0, 3071.0));
            let class = if l >= t.calc_threshold {
                2
            } else if (lc - hc) / (lc + hc + 2000.0) < t.dei_threshold {
                0
            } else {
                1
            };
            want[class] += 1;
        }
        let have = [got.counts.lipid_rich, got.counts.fibrotic, got.counts.calcified];
        ensure(have == want && got.excluded == excluded, || {
            format!("DE counts {have:?}/{} vs enumeration {want:?}/{excluded}", got.excluded)
        })?;
    }
    Ok(format!(
        "10 shifts recovered (worst {worst:.3} mm), DEI(100,50) = 50/2150, DE composition equals enumeration"
    ))
}

fn perivascular() -> Check {
    let mut s = spec(PhantomKind::FatCollarTube, [56, 56, 40], 0.4);
    s.fat_radius = Some(10.0);
    let ph = make_phantom(&s).map_err(|e| e.to_string())?;
    let (_, _, outer) = segmented(&ph, 3.0, 13.0);
    let cl = Centerline::new("c", ph.truth.centerline(0.5), Some("LAD".into())).unwrap();
    let roi = build_fat_roi(&ph.volume, &cl, &outer, RoiWidth::Manual { mm: 6.0 }, (3.0, 13.0))
        .map_err(|e| e.to_string())?;
    let stats = fat_stats(&roi, &ph.volume);
    let mean = stats.mean_hu.ok_or("no voxel in the fat window")?;
    let shell = PI * (9.0f64.powi(2) - 3.0f64.powi(2)) * 10.0;
    let vol = roi.volume_mm3();
    ensure((mean + 100.0).abs() <= 1.0, || format!("FAI mean {mean:.2} HU"))?;
    ensure((vol - shell).abs() <= 0.05 * shell, || format!("ROI volume {vol:.1} vs shell {shell:.1} mm3"))?;

    let v = Volume::filled([4, 4, 4], [1.0; 3], [0.0; 3], -100).map_err(|e| e.to_string())?;
    let lines: Vec<(Centerline, WallSurface)> = ["RCA", "LAD", "LCx"]
        .iter()
        .map(|name| {
            let pts = (0..=80).map(|i| [0.0, 0.0, i as f64]).collect();
            let c = Centerline::new(name.to_lowercase(), pts, Some(name.to_string())).unwrap();
            let ss: Vec<f64> = (0..=160).map(|k| 0.5 * k as f64).collect();
            (c, constant_surface(WallKind::Outer, 1.0, &ss))
        })
        .collect();
    let walls: Vec<BranchWalls> = lines.iter().map(|(c, w)| BranchWalls { centerline: c, outer: w }).collect();
    let auto = auto_branch_rois(&v, &walls).map_err(|e| e.to_string())?;
    let ranges: Vec<(f64, f64)> = auto.rois.iter().map(|r| (r.start_s, r.end_s)).collect();
    ensure(ranges == [(10.0, 50.0), (0.0, 40.0), (0.0, 40.0)], || format!("auto ranges {ranges:?}"))?;
    Ok(format!(
        "FAI mean {mean:.2} HU, ROI {vol:.1} vs shell {shell:.1} mm3 ({:+.2}%), auto ranges RCA/LAD/LCx {ranges:?}",
        100.0 * (vol - shell) / shell
    ))
}

fn rbf_edits() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (n_s, n_a) = (41, 72);
    let mut worst = 0.0f64;
    let mut untouched = 0usize;
    let mut trials = 0;
    while trials < 100 {
        let section_s: Vec<f64> = (0..n_s).map(|k| 0.5 * k as f64).collect();
        let w = WallSurface {
            kind: WallKind::Inner,
            step_s: 0.5,
            angles_n: n_a,
            radii: (0..n_s).map(|_| (0..n_a).map(|_| rng.random_range(1.5..3.0)).collect()).collect(),
            section_s,
        };
        let cs: Vec<EditConstraint> = (0..rng.random_range(1..=4))
            .map(|_| {
                let mut c = EditConstraint::new(rng.random_range(0.0..20.0), rng.random_range(0.0..TAU), 0.0);
                c.target = rng.random_range(1.0..4.0);
                c.sigma_s = rng.random_range(1.0..4.0);
                c.sigma_theta = rng.random_range(0.2..1.0);
                c
            })
            .collect();
        // the node each constraint lands on
        let nodes: Vec<(usize, usize)> = cs
            .iter()
            .map(|c| ((c.s / 0.5).round() as usize, ((c.theta / (TAU / n_a as f64)).round() as usize) % n_a))
            .collect();
        if (1..nodes.len()).any(|j| nodes[..j].contains(&nodes[j])) {
            continue;
        }
        trials += 1;
        let out = apply_rbf_correction(&w, &cs).map_err(|e| format!("trial {trials}: {e}"))?;
        for (c, &(k, i)) in cs.iter().zip(&nodes) {
            let r = (out.radii[k][i] - c.target).abs();
            worst = worst.max(r);
            ensure(r <= 1e-6, || format!("trial {trials}: residual {r:e} mm at node ({k}, {i})"))?;
        }
        for k in 0..n_s {
            for i in 0..n_a {
                let inside = cs.iter().zip(&nodes).any(|(c, &(kc, ic))| {
                    let ds = (w.section_s[k] - w.section_s[kc]) / c.sigma_s;
                    let mut dt = (w.angle(i) - w.angle(ic)).abs() % TAU;
                    dt = dt.min(TAU - dt) / c.sigma_theta;
                    wendland_c2((ds * ds + dt * dt).sqrt()) > 0.0
                });
                if !inside {
                    untouched += 1;
                    let (a, b) = (out.radii[k][i], w.radii[k][i]);
                    ensure(a.to_bits() == b.to_bits(), || {
                        format!("trial {trials}: node ({k}, {i}) outside support changed {b} -> {a}")
                    })?;
                }
            }
        }
    }
    Ok(format!("100 edits, worst residual {worst:.1e} mm, {untouched} nodes outside support bit-identical"))
}

fn plaque_session(dir: &std::path::Path, name: &str) -> Session {
    let w = common::write_phantom(dir, name, &common::small_tube());
    let mut s = Session::new("repro");
    s.apply(Command::RegisterVolume {
        path: common::path_str(&w.low),
    })
    .unwrap();
    s.apply(Command::SetSeeds {
        seeds: common::end_seeds(&w.phantom, 2.0),
    })
    .unwrap();
    s
}

fn reproducibility() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut a = plaque_session(dir.path(), "tube");
    let mut b = plaque_session(dir.path(), "tube");
    run_pipeline(&mut a, &PipelineConfig::default()).map_err(|e| e.to_string())?;
    run_pipeline(&mut b, &PipelineConfig::default()).map_err(|e| e.to_string())?;
    let (ba, bb) = (to_bytes(a.project()).unwrap(), to_bytes(b.project()).unwrap());
    ensure(ba == bb, || "two runs serialize differently".into())?;
    let csv = |s: &Session| {
        let l = &s.project().lesions["L1"];
        l.report.histogram.to_csv(l.report.voxel_volume_mm3).unwrap()
    };
    ensure(csv(&a) == csv(&b), || "histogram exports differ".into())?;
    let again = run_pipeline(&mut a, &PipelineConfig::default()).map_err(|e| e.to_string())?;
    ensure(again.actions.is_empty() && to_bytes(a.project()).unwrap() == ba, || {
        format!("re-run was not a no-op: {:?}", again.actions)
    })?;
    let replayed = Session::replay("repro", &a.project().events, None).map_err(|e| e.to_string())?;
    ensure(to_bytes(replayed.project()).unwrap() == ba, || "replay differs from the live state".into())?;
    Ok(format!("{} bytes identical across runs and replay of {} events", ba.len(), a.project().events.len()))
}

fn end_to_end() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let w = common::write_phantom(dir.path(), "big", &spec(PhantomKind::PlaqueTube, [256; 3], 0.4));
    let start = Instant::now();
    let mut s = Session::new("big");
    s.apply(Command::RegisterVolume {
        path: common::path_str(&w.low),
    })
    .map_err(|e| e.to_string())?;
    s.apply(Command::SetSeeds {
        seeds: common::end_seeds(&w.phantom, 3.0),
    })
    .map_err(|e| e.to_string())?;
    let sum = run_pipeline(&mut s, &PipelineConfig::default()).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let r = &s.project().lesions[&sum.lesions[0]].report;
    ensure(took <= Duration::from_secs(60), || format!("{:.1} s", secs(took)))?;
    Ok(format!(
        "{:.1} s for {:?}; lesion {:.1} mm long, {:.0} mm3 plaque, stenosis {:.1}%",
        secs(took),
        sum.actions,
        r.distal_s - r.proximal_s,
        r.total_plaque_mm3,
        r.stenosis_area_pct
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("centerline accuracy", centerline_accuracy),
        ("MRF optimality oracle", mrf_optimality),
        ("subvoxel lumen accuracy", subvoxel_lumen),
        ("outer wall", outer_wall),
        ("stenosis", stenosis),
        ("composition", composition),
        ("dual energy", dual_energy),
        ("perivascular", perivascular),
        ("RBF edits", rbf_edits),
        ("reproducibility", reproducibility),
        ("end-to-end runtime", end_to_end),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let t = secs(start.elapsed());
        match outcome {
            Ok(detail) => println!("PASS  {name} ({t:.1} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} ({t:.1} s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
