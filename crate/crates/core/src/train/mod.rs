//! Initialization, the Adam optimizer, the training loop and the ablation runner.

mod ablation;
mod adam;
mod config;
mod init;
mod trainer;

pub use ablation::{ablation_split, run_ablation_matrix, select, AblationRow, AblationTable, ABLATION_RATIO};
pub use adam::{adam_step, AdamConfig, OptimState};
pub use config::{RunConfig, TrainConfig};
pub use init::{gaussian_init, InitPolicy};
pub use trainer::{epoch_order, evaluate, init_model, make_batch, predict_masks, resume, train, LogRow, TrainLog, TrainOutcome};
