//! Pretraining and fine-tuning.

pub mod config;
pub mod data;
pub mod loss;
pub mod trainer;

pub use config::TrainConfig;
pub use data::{Batch, DataError, Dataset};
pub use loss::{distortion, guidance_loss, guidance_targets, objective, objective_with_targets, rd_loss, LossReport, ObjectiveVars, RdVars, Stage, MSE_SCALE};
pub use trainer::{evaluate, validation_batches, EpochRecord, LossCap, StepOutcome, TrainError, TrainResult, Trainer};
