//! Semi-automatic coronary plaque analysis on CCTA volumes.
//!
//! The crate covers the computational pipeline end to end: volume I/O and
//! analytic phantoms, vesselness and minimal-path centerlines, curved planar
//! reformation, lumen segmentation with an exactly solved cyclic MRF, outer
//! wall detection, RBF surface edits, plaque composition, dual-energy
//! analysis and perivascular fat statistics.

pub mod centerline;
pub mod dual_energy;
pub mod error;
pub mod geom;
pub mod perivascular;
pub mod phantom;
pub mod plaque;
pub mod reformat;
pub mod tube;
pub mod vesselness;
pub mod volume;
pub mod wall;

pub use centerline::{Centerline, CenterlineEdit, Frame, MarkerEnd, SectionMarkers};
pub use error::{Error, Result};
pub use phantom::{make_phantom, GroundTruth, Phantom, PhantomKind, PhantomSpec};
pub use volume::{load_volume, write_volume, Volume};
