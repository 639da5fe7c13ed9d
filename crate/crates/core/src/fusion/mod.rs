//! Box-prior fusion branch, gated-residual fusion baseline, per-layer 3D
//! classifiers, the segmentation/distillation losses, and the training loop.

mod config;
mod gradsuite;
mod model;
mod stack;
mod train;

pub use config::TrainConfig;
pub use gradsuite::{gradient_suite, SuiteEntry};
pub use model::{
    branch_predict, class_aware_attention, compute_losses, encode_toy, fuse_layer,
    fuse_multiscale, msfskd_fuse, pixel_window_means, predict_3d_layer, scene_inputs,
    select_box_features, window_half, ModelParams, SceneInputs,
};
pub use stack::{
    BoxFeatureSet, ClassEmbeddingTable, ConfusionMatrix, FeatureStack, LossReport,
};
pub use train::{
    scene_generator_config,
    branch_probabilities, build_scene_set, compare, distill_loss_with_teacher, evaluate,
    in_box_accuracy, loss_curve_csv, scene_loss_and_gradient, train, train_step, write_loss_curve, CompareReport,
    CompareRun, LossValues, StepRecord, TrainOutcome,
};

use crate::geometry::GeometryError;
use crate::numerics::NumericsError;
use crate::scenedata::SceneError;

/// Errors from the fusion pipeline and training loop.
#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("empty box: no projected points inside")]
    EmptyBox,
    #[error("no annotated box with member points; loss undefined")]
    LossUndefined,
    #[error("label {label} outside [0, {classes}) at FOV row {row}")]
    BadLabel {
        label: usize,
        classes: usize,
        row: usize,
    },
    #[error("configuration error: {msg}")]
    Config { msg: String },
    #[error("configuration parse error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },
    #[error("{path}: {source}")]
    ConfigIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, FusionError>;
