//! Minimal dense compute layer: matrices, activations, losses, attention,
//! and a recorded-operation reverse-mode gradient engine with finite-difference
//! verification.

mod gradcheck;
mod layers;
mod matrix;
mod ops;
mod params;
mod tape;

pub use gradcheck::{grad_check, GradReport};
pub use layers::{
    attention_apply, insert_attention, insert_mlp, mlp_apply, mlp_apply_tapped, mlp_forward,
    multihead_attention, TapeAttention, TapeAttentionHead, TapeLayer, TapeMlp,
};
pub use matrix::Matrix;
pub use ops::{
    cosine_similarity, cross_entropy, kl_divergence, lovasz_softmax, sigmoid, softmax_rows,
    PROB_CLAMP,
};
pub use params::{
    glorot_uniform, Activation, AttentionHead, AttentionParams, MlpLayer, MlpParams, ParamFlat,
};
pub use tape::{Gradients, NodeId, Tape};

/// Errors from the compute layer.
#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("label {label} out of range for {classes} classes at row {row}")]
    LabelOutOfRange {
        label: usize,
        classes: usize,
        row: usize,
    },
    #[error("row {row} is not a probability distribution (sum = {sum})")]
    NotNormalized { row: usize, sum: f64 },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, NumericsError>;
