//! Rigid-body transform chains, pinhole projection, rasterization, and
//! bounding-box geometry.

pub mod calib;
mod ops;
mod types;

pub use ops::{
    box3d_corners, compose_chain, invert_chain, invert_transform, points_in_box2d, project_box3d,
    project_points, rasterize,
};
pub use types::{
    BoundingBox2D, BoundingBox3D, ChainStage, ImagePlane, IntrinsicMatrix, Point3, PointCloud,
    PoseChain, ProjectedPoint, RigidTransform, ORTHONORMALITY_TOL,
};

/// Errors from geometric validation and calibration parsing.
#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("pose chain is empty")]
    EmptyChain,
    #[error("pose chain stage {index}: source frame `{source_frame}` does not match next target `{next_target}`")]
    ChainMismatch {
        index: usize,
        source_frame: String,
        next_target: String,
    },
    #[error("invalid chain label `{label}` (expected `target<-source`)")]
    BadChainLabel { label: String },
    #[error("matrix is not a rigid transform: {reason}")]
    NotRigid { reason: String },
    #[error("invalid intrinsic matrix: {reason}")]
    BadIntrinsics { reason: String },
    #[error("image plane dimensions must be positive")]
    BadImagePlane,
    #[error("invalid point: {reason}")]
    InvalidPoint { reason: String },
    #[error("invalid bounding box: {reason}")]
    BadBox { reason: String },
    #[error("box has no visible projection on the image plane")]
    BoxNotVisible,
    #[error("{path}: {source}")]
    CalibIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {msg}")]
    CalibParse {
        path: String,
        line: usize,
        msg: String,
    },
}

pub type Result<T> = std::result::Result<T, GeometryError>;
