//! Optimization: Adam with group-selective updates, and the two-stage
//! training loop with its ablation variants.

pub mod adam;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use train::{
    adversarial_train, predict, pretrain, train_full, write_history, Ablation, EpochRecord,
    TrainConfig, TrainOutcome,
};
