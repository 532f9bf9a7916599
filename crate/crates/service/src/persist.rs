//! `.coroplaq.json` project files.

use std::path::Path;

use serde_json::{json, Value};

use crate::error::{Result, ServiceError};
use crate::project::{Project, SCHEMA_VERSION};

pub const PROJECT_SUFFIX: &str = ".coroplaq.json";

/// Canonical serialized form; equal projects give identical bytes.
pub fn to_bytes(p: &Project) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(p)?;
    out.push(b'\n');
    Ok(out)
}

/// Parse a project file, migrating older schema versions.
pub fn from_bytes(bytes: &[u8]) -> Result<Project> {
    let mut v: Value = serde_json::from_slice(bytes)?;
    let found = match v.get("schema_version") {
        None => 0,
        Some(n) => n
            .as_u64()
            .ok_or_else(|| ServiceError::BadRequest(format!("schema_version {n} is not a version number")))?,
    };
    if found > SCHEMA_VERSION as u64 {
        return Err(ServiceError::SchemaVersion {
            found,
            supported: SCHEMA_VERSION,
        });
    }
    if found == 0 {
        migrate_v0(&mut v)?;
    }
    let p: Project = serde_json::from_value(v)?;
    p.check_integrity()?;
    Ok(p)
}

/// Version 0 files keep thresholds as a `[t_lipid_fib, t_fib_calc]` pair and
/// have no id counters or event log.
fn migrate_v0(v: &mut Value) -> Result<()> {
    let obj = v
        .as_object_mut()
        .ok_or_else(|| ServiceError::BadRequest("project file is not a JSON object".into()))?;
    if let Some(Value::Array(t)) = obj.get("thresholds") {
        let (a, b) = match t.as_slice() {
            [a, b] => (a.clone(), b.clone()),
            _ => return Err(ServiceError::BadRequest("version 0 thresholds must hold two values".into())),
        };
        obj.insert("thresholds".into(), json!({ "t_lipid_fib": a, "t_fib_calc": b }));
    }
    let highest = |key: &str, prefix: &str| -> u64 {
        obj.get(key)
            .and_then(Value::as_object)
            .map(|m| {
                m.keys()
                    .filter_map(|k| k.strip_prefix(prefix)?.parse::<u64>().ok())
                    .max()
                    .unwrap_or(0)
            })
            .unwrap_or(0)
    };
    let counters = json!({
        "centerline": highest("centerlines", "cl"),
        "surface": highest("surfaces", "s"),
        "lesion": highest("lesions", "L"),
        "fat_roi": highest("fat_rois", "f"),
    });
    obj.insert("counters".into(), counters);
    obj.entry("events").or_insert(json!([]));
    let defaults = serde_json::to_value(Project::new(""))?;
    for key in [
        "volume",
        "high_kv",
        "registration",
        "crop",
        "mask",
        "seeds",
        "centerlines",
        "markers",
        "surfaces",
        "lesions",
        "fat_rois",
        "thresholds",
        "de_thresholds",
        "lap_volume_threshold",
        "notes",
    ] {
        obj.entry(key).or_insert_with(|| defaults[key].clone());
    }
    obj.insert("schema_version".into(), json!(SCHEMA_VERSION));
    let notes = obj.get_mut("notes").and_then(Value::as_array_mut).expect("inserted above");
    notes.push(json!(format!("migrated from schema version 0 to {SCHEMA_VERSION}")));
    Ok(())
}

/// Write atomically through a temporary file in the same directory.
pub fn save_project(p: &Project, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, to_bytes(p)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_project(path: impl AsRef<Path>) -> Result<Project> {
    from_bytes(&std::fs::read(path)?)
}
