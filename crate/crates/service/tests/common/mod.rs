#![allow(dead_code)]

use std::path::{Path, PathBuf};

use coroplaq_core::dual_energy::{meta_path_for, DeMeta};
use coroplaq_core::phantom::{make_phantom, Phantom, PhantomKind, PhantomSpec};
use coroplaq_core::geom::Vec3;
use coroplaq_core::write_volume;

/// Plaque tube small enough for quick end-to-end runs.
pub fn small_tube() -> PhantomSpec {
    let mut spec = PhantomSpec::new(PhantomKind::PlaqueTube);
    spec.dims = [48, 48, 64];
    spec
}

pub struct Written {
    pub phantom: Phantom,
    pub low: PathBuf,
    pub high: Option<PathBuf>,
}

pub fn write_meta(path: &Path, kvp: f64, frame: &str) {
    let m = DeMeta {
        kvp: Some(kvp),
        frame_of_reference: Some(frame.into()),
        series_time: None,
    };
    std::fs::write(meta_path_for(path), serde_json::to_string(&m).unwrap()).unwrap();
}

/// Write the phantom (and its high-kV companion) as `name.mhd` / `name_high.mhd`.
pub fn write_phantom(dir: &Path, name: &str, spec: &PhantomSpec) -> Written {
    let phantom = make_phantom(spec).unwrap();
    let low = dir.join(format!("{name}.mhd"));
    write_volume(&phantom.volume, &low).unwrap();
    let high = phantom.companion.as_ref().map(|h| {
        let p = dir.join(format!("{name}_high.mhd"));
        write_volume(h, &p).unwrap();
        write_meta(&low, 80.0, "frame-1");
        write_meta(&p, 140.0, "frame-1");
        p
    });
    Written { phantom, low, high }
}

/// Seeds `margin` mm inside both ends of the phantom axis.
pub fn end_seeds(p: &Phantom, margin: f64) -> Vec<Vec3> {
    let l = p.truth.length();
    vec![p.truth.axis.point_at(margin), p.truth.axis.point_at(l - margin)]
}

pub fn path_str(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}
