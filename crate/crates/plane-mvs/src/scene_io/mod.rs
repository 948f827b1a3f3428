//! Scene input/output: sparse SfM models, grayscale images, point clouds,
//! and the binary depth-map container used between pipeline stages.

mod depth_file;
mod images;
mod model;
mod ply;

use std::path::PathBuf;

use thiserror::Error;

pub use depth_file::{read_depth_map, write_depth_map};
pub use images::{load_gray, GrayImage};
pub use model::{
    parse_sparse_model, CameraIntrinsics, CameraKind, ImageMeta, Observation, Point3D,
    SparseModel,
};
pub use ply::{read_ply, write_ply, PlyPoint};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("missing file: {0}")]
    FileMissing(PathBuf),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Link(String),
    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SceneError {
    pub(crate) fn parse(path: &std::path::Path, line: usize, message: impl Into<String>) -> Self {
        SceneError::Parse {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn format(path: &std::path::Path, message: impl Into<String>) -> Self {
        SceneError::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}
