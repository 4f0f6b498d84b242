//! Augmentations, the bidirectional InfoNCE objective and the training loop.

pub mod augment;
pub mod loss;
pub mod train;

pub use augment::{augment_region, augment_road, AugmentationPolicy};
pub use loss::{bidirectional_loss, info_nce, LossReport, LossTerm, DEFAULT_TAU};
pub use train::{
    default_targets, mix_seed, prepare_samples, train, EpochLoss, PreparedSample, Schedule, TrainConfig,
};
