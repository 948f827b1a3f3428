//! Multi-view stereo reconstruction from calibrated images.
//!
//! The crate turns a sparse structure-from-motion model plus its images into a
//! dense point cloud in five stages: neighbor view selection, patch-match
//! depth/normal estimation with a dilated matching window, geometric
//! consistency filtering, plane-hypothesis completion of texture-less holes,
//! and cross-view fusion.
//!
//! Each stage is usable on its own; [`pipeline::run`] chains them and writes
//! per-stage artifacts so ablations only re-run downstream work.

pub mod consistency;
pub mod fusion;
pub mod geometry;
pub mod initialization;
pub mod matcher;
pub mod phi;
pub mod pipeline;
mod rng;
pub mod scene_io;
pub mod view_selection;

pub use geometry::{Camera, PlaneHypothesis};
pub use matcher::{DepthNormalMap, MatchConfig};
pub use phi::PhiConfig;
pub use scene_io::{GrayImage, SparseModel};
