use std::path::PathBuf;

use crate::tensor::Shape;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid tensor shape {shape}: {reason}")]
    InvalidShape { shape: Shape, reason: &'static str },

    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("{op}: input has {actual} channels, expected {expected}")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("concat_channels: input {index} has shape {shape}, incompatible with {reference}")]
    ConcatMismatch {
        index: usize,
        shape: Shape,
        reference: Shape,
    },

    #[error("conv2d: kernel {kernel} does not fit input {input} (empty output)")]
    EmptyOutput { input: Shape, kernel: Shape },

    #[error("even kernel size {0}x{1} cannot preserve spatial size")]
    EvenKernel(usize, usize),

    #[error("backward: loss must be a scalar, got shape {0}")]
    NonScalarLoss(Shape),

    #[error("backward: tape is empty")]
    EmptyTape,

    #[error("input size {h}x{w} is not divisible by {divisor}")]
    IndivisibleInput { h: usize, w: usize, divisor: usize },

    #[error("resolution mismatch after adaptation: {0}")]
    ResolutionMismatch(String),

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("crop target {target_h}x{target_w} exceeds source {src_h}x{src_w}")]
    CropTooLarge {
        src_h: usize,
        src_w: usize,
        target_h: usize,
        target_w: usize,
    },

    #[error("{path}: {reason}")]
    Data { path: PathBuf, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
