//! Joint denoising and learned lossy compression.
//!
//! - [`tensor`]: dense tensors, reverse-mode autodiff and Adam.
//! - [`noise`]: sRGB gamma and signal-dependent sensor noise synthesis.
//! - [`entropy`]: rANS coding under Gaussian and factorised models, and the
//!   `.jdc` container.
//! - [`net`]: the two-branch codec model, inference coding and checkpoints.
//! - [`train`]: objectives, pretraining and fine-tuning.
//! - [`eval`]: metrics, file-level coding and rate-distortion sweeps.
//! - [`cli`]: the `noisecodec` command line.

pub mod cli;
pub mod entropy;
pub mod eval;
pub mod net;
pub mod noise;
pub mod tensor;
pub mod train;
