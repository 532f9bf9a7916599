use serde::Serialize;
use thiserror::Error;

use crate::pipeline::PipelineStep;

/// Machine-readable error codes returned by the API. The set is closed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    HeaderParse,
    UnsupportedFormat,
    SizeMismatch,
    OutOfBounds,
    InvalidPhantomSpec,
    InvalidParameter,
    DegenerateInput,
    NoPath,
    NoVesselAtSeed,
    ArclengthOutOfRange,
    ConflictingConstraints,
    Coverage,
    DegenerateReference,
    UndecidablePairing,
    IoError,
    ParseError,
    CsvError,
    NotFound,
    AlreadyExists,
    UnsupportedSchemaVersion,
    MissingInput,
    MissingSeeds,
    StaleInput,
    NotADePair,
    IntegrityViolation,
    BadRequest,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 26] = [
        ErrorCode::HeaderParse,
        ErrorCode::UnsupportedFormat,
        ErrorCode::SizeMismatch,
        ErrorCode::OutOfBounds,
        ErrorCode::InvalidPhantomSpec,
        ErrorCode::InvalidParameter,
        ErrorCode::DegenerateInput,
        ErrorCode::NoPath,
        ErrorCode::NoVesselAtSeed,
        ErrorCode::ArclengthOutOfRange,
        ErrorCode::ConflictingConstraints,
        ErrorCode::Coverage,
        ErrorCode::DegenerateReference,
        ErrorCode::UndecidablePairing,
        ErrorCode::IoError,
        ErrorCode::ParseError,
        ErrorCode::CsvError,
        ErrorCode::NotFound,
        ErrorCode::AlreadyExists,
        ErrorCode::UnsupportedSchemaVersion,
        ErrorCode::MissingInput,
        ErrorCode::MissingSeeds,
        ErrorCode::StaleInput,
        ErrorCode::NotADePair,
        ErrorCode::IntegrityViolation,
        ErrorCode::BadRequest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::HeaderParse => "header_parse",
            ErrorCode::UnsupportedFormat => "unsupported_format",
            ErrorCode::SizeMismatch => "size_mismatch",
            ErrorCode::OutOfBounds => "out_of_bounds",
            ErrorCode::InvalidPhantomSpec => "invalid_phantom_spec",
            ErrorCode::InvalidParameter => "invalid_parameter",
            ErrorCode::DegenerateInput => "degenerate_input",
            ErrorCode::NoPath => "no_path",
            ErrorCode::NoVesselAtSeed => "no_vessel_at_seed",
            ErrorCode::ArclengthOutOfRange => "arclength_out_of_range",
            ErrorCode::ConflictingConstraints => "conflicting_constraints",
            ErrorCode::Coverage => "coverage",
            ErrorCode::DegenerateReference => "degenerate_reference",
            ErrorCode::UndecidablePairing => "undecidable_pairing",
            ErrorCode::IoError => "io_error",
            ErrorCode::ParseError => "parse_error",
            ErrorCode::CsvError => "csv_error",
            ErrorCode::NotFound => "not_found",
            ErrorCode::AlreadyExists => "already_exists",
            ErrorCode::UnsupportedSchemaVersion => "unsupported_schema_version",
            ErrorCode::MissingInput => "missing_input",
            ErrorCode::MissingSeeds => "missing_seeds",
            ErrorCode::StaleInput => "stale_input",
            ErrorCode::NotADePair => "not_a_de_pair",
            ErrorCode::IntegrityViolation => "integrity_violation",
            ErrorCode::BadRequest => "bad_request",
        }
    }

    /// HTTP status for the code.
    pub fn status(self) -> u16 {
        match self {
            ErrorCode::NotFound => 404,
            ErrorCode::AlreadyExists | ErrorCode::StaleInput | ErrorCode::UnsupportedSchemaVersion => 409,
            ErrorCode::BadRequest | ErrorCode::ParseError => 400,
            ErrorCode::IoError => 500,
            _ => 422,
        }
    }
}

/// The one code a library error maps to.
pub fn core_code(e: &coroplaq_core::Error) -> ErrorCode {
    use coroplaq_core::Error as E;
    match e {
        E::HeaderParse { .. } => ErrorCode::HeaderParse,
        E::UnsupportedFormat(_) => ErrorCode::UnsupportedFormat,
        E::SizeMismatch { .. } => ErrorCode::SizeMismatch,
        E::OutOfBounds(_) => ErrorCode::OutOfBounds,
        E::PhantomSpec(_) => ErrorCode::InvalidPhantomSpec,
        E::Parameter(_) => ErrorCode::InvalidParameter,
        E::Degenerate(_) => ErrorCode::DegenerateInput,
        E::NoPath => ErrorCode::NoPath,
        E::NoVesselAtSeed(_) => ErrorCode::NoVesselAtSeed,
        E::ArclengthOutOfRange { .. } => ErrorCode::ArclengthOutOfRange,
        E::ConflictingConstraints(_) => ErrorCode::ConflictingConstraints,
        E::Coverage { .. } => ErrorCode::Coverage,
        E::DegenerateReference(_) => ErrorCode::DegenerateReference,
        E::Undecidable(_) => ErrorCode::UndecidablePairing,
        E::Io(_) => ErrorCode::IoError,
        E::Json(_) => ErrorCode::ParseError,
        E::Csv(_) => ErrorCode::CsvError,
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] coroplaq_core::Error),
    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: String },
    #[error("project {0} already exists")]
    AlreadyExists(String),
    #[error("schema version {found} is newer than the supported {supported}")]
    SchemaVersion { found: u64, supported: u32 },
    #[error("{0}")]
    MissingInput(String),
    #[error("no seeds and no centerline to work from")]
    MissingSeeds,
    #[error("{kind} {id} is stale; recompute it first")]
    Stale { kind: &'static str, id: String },
    #[error("not a dual-energy pair: {0}")]
    NotADePair(String),
    #[error("referential integrity: {0}")]
    Integrity(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("step {step} failed: {source}")]
    Pipeline {
        step: PipelineStep,
        #[source]
        source: Box<ServiceError>,
    },
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Core(e.into())
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        ServiceError::Core(e.into())
    }
}

impl ServiceError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ServiceError::Core(e) => core_code(e),
            ServiceError::NotFound { .. } => ErrorCode::NotFound,
            ServiceError::AlreadyExists(_) => ErrorCode::AlreadyExists,
            ServiceError::SchemaVersion { .. } => ErrorCode::UnsupportedSchemaVersion,
            ServiceError::MissingInput(_) => ErrorCode::MissingInput,
            ServiceError::MissingSeeds => ErrorCode::MissingSeeds,
            ServiceError::Stale { .. } => ErrorCode::StaleInput,
            ServiceError::NotADePair(_) => ErrorCode::NotADePair,
            ServiceError::Integrity(_) => ErrorCode::IntegrityViolation,
            ServiceError::BadRequest(_) => ErrorCode::BadRequest,
            ServiceError::Pipeline { source, .. } => source.code(),
        }
    }

    /// Pipeline step that failed, if any.
    pub fn step(&self) -> Option<PipelineStep> {
        match self {
            ServiceError::Pipeline { step, .. } => Some(*step),
            _ => None,
        }
    }

    pub fn not_found(kind: &'static str, id: impl Into<String>) -> Self {
        ServiceError::NotFound { kind, id: id.into() }
    }
}

/// JSON error body: `{"error": {"code", "message", "step"?}}`.
#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<PipelineStep>,
}

impl From<&ServiceError> for ErrorBody {
    fn from(e: &ServiceError) -> Self {
        let message = match e {
            ServiceError::Pipeline { source, .. } => source.to_string(),
            other => other.to_string(),
        };
        ErrorBody {
            code: e.code(),
            message,
            step: e.step(),
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn codes_are_distinct_and_snake_case() {
        let names: HashSet<&str> = ErrorCode::ALL.iter().map(|c| c.as_str()).collect();
        assert_eq!(names.len(), ErrorCode::ALL.len());
        for c in ErrorCode::ALL {
            assert_eq!(serde_json::to_value(c).unwrap(), c.as_str());
        }
    }

    #[test]
    fn pipeline_errors_keep_the_inner_code() {
        let e = ServiceError::Pipeline {
            step: PipelineStep::CenterlineExtraction,
            source: Box::new(ServiceError::MissingSeeds),
        };
        let body = ErrorBody::from(&e);
        assert_eq!(body.code, ErrorCode::MissingSeeds);
        assert_eq!(body.step, Some(PipelineStep::CenterlineExtraction));
        let json = serde_json::to_value(&body).unwrap();
        assert_eq!(json["step"], "centerline_extraction");
        let e = ServiceError::Core(coroplaq_core::Error::ArclengthOutOfRange { s: 9.0, total: 5.0 });
        assert_eq!(e.code().as_str(), "arclength_out_of_range");
    }
}
