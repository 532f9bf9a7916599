use std::path::PathBuf;

use thiserror::Error;

/// Every failure the analysis library can report.
///
/// Variants are grouped by the stage that raises them; the session service maps
/// each variant onto exactly one API error code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    HeaderParse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("raw data size mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("point ({:.3}, {:.3}, {:.3}) mm lies outside the sampling domain", .0[0], .0[1], .0[2])]
    OutOfBounds([f64; 3]),
    #[error("invalid phantom spec: {0}")]
    PhantomSpec(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("no path connects the seeds inside the search region")]
    NoPath,
    #[error("no vessel at seed (vesselness {0:.4})")]
    NoVesselAtSeed(f64),
    #[error("arclength {s:.3} mm outside [0, {total:.3}] mm")]
    ArclengthOutOfRange { s: f64, total: f64 },
    #[error("conflicting constraints: {0}")]
    ConflictingConstraints(String),
    #[error("range [{start:.3}, {end:.3}] mm not covered by surface [{covered_start:.3}, {covered_end:.3}] mm")]
    Coverage {
        start: f64,
        end: f64,
        covered_start: f64,
        covered_end: f64,
    },
    #[error("reference area must be positive (got {0:.4} mm²)")]
    DegenerateReference(f64),
    #[error("cannot decide dual-energy pairing: {0}")]
    Undecidable(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
