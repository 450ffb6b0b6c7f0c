//! Layers built from tensor ops: Conv-BN-ReLU blocks, ASPP branches and the ConvLSTM cell.

mod aspp;
mod blocks;
mod convlstm;
mod params;
mod session;

pub use aspp::{atrous_options, AsppBranch};
pub use blocks::{Activation, BatchNorm, Conv2d, ConvBlock, BN_EPSILON, BN_MOMENTUM};
pub use convlstm::{ConvLstmCell, ConvLstmState};
pub use params::{Param, ParamId, ParamRole, ParameterStore};
pub use session::{Mode, Session};
