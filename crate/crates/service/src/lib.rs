//! Project state, pipeline orchestration and the HTTP API of the coroplaq
//! workstation.

pub mod api;
pub mod error;
pub mod persist;
pub mod pipeline;
pub mod project;
pub mod session;

pub use error::{ErrorCode, Result, ServiceError};
pub use persist::{load_project, save_project};
pub use pipeline::{heart_crop, run_pipeline, PipelineConfig, PipelineStep};
pub use project::{Project, SCHEMA_VERSION};
pub use session::{Applied, Command, Session};
