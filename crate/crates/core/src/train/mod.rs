//! Loss, reverse-mode gradients, Adam, the training loop and checkpoints.

pub mod adam;
pub mod backward;
pub mod checkpoint;
pub mod gradcheck;
pub mod log;
pub mod trainer;

pub use adam::{adam_update, AdamState};
pub use backward::{backward, sample_loss, GradientSet};
pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint};
pub use log::{format_log, EpochRecord, LOG_HEADER};
pub use trainer::{
    evaluate, loss_mse, lr_schedule, sample_gradient, train, train_with, TrainConfig, TrainOutcome,
};
