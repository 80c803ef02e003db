//! Training schedules, the back-normal predictor and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod normal_net;
pub mod trainer;

pub use checkpoint::{config_hash, load_models, save_models};
pub use config::{Phase, Schedule, TrainConfig};
pub use normal_net::{masked_l1, NormalNet};
pub use trainer::{
    alternate_schedule, pretrain_coarse, train_fine, train_normal_net, EpochReport, Models, StepRecord, Target,
    Trainer, TrainingImage, TrainingSet,
};

#[cfg(test)]
mod tests;
