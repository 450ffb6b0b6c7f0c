//! CLCI-Net: cross-level feature fusion, nine-scale atrous pyramid and
//! ConvLSTM context inference for binary lesion segmentation, built on a small
//! reverse-mode autodiff engine.

pub mod data;
pub mod error;
pub mod gradsuite;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
