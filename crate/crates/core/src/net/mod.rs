//! The two-branch joint denoising and compression network.

pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod layers;
pub mod model;

pub use checkpoint::{Checkpoint, CheckpointError, ModelHeader};
pub use codec::{pad_reflect, CodecError, LatentBundle};
pub use config::{ArchConfig, Metric, Quality, ANALYSIS_FACTOR, PAD_MULTIPLE};
pub use layers::{Bound, ParamId, ParamStore};
pub use model::{quantize_noise, quantize_round, Branch, CodecModel, Features, HyperOutputs};
