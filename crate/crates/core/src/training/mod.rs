//! Objectives, schedules, mining, batch sampling, optimization and the
//! training loop.

mod config;
mod lars;
pub mod losses;
mod miner;
mod sampler;
mod schedule;
mod trainer;

pub use config::{LossMode, TrainConfig};
pub use lars::{Lars, LarsConfig};
pub use losses::{
    barlow_twins_grad, barlow_twins_loss, combined_loss, cross_correlation, info_nce_from_similarities, info_nce_grad,
    info_nce_loss, Triplet,
};
pub use miner::{cosine_matrix, mine_from_similarities, mine_triplets};
pub use sampler::{group_by_subject, sample_batch, sample_groups};
pub use schedule::{beta, lr_schedule, BetaSchedule};
pub use trainer::{distorted_views, train, train_observed, EpochLog, LogRecord, StepLog, TrainData, TrainOutcome};
