//! Metrics, image files and rate-distortion evaluation.

pub mod files;
pub mod image;
pub mod metrics;
pub mod rd;

pub use files::{compress, compress_file, decompress, decompress_file, Compressed, EvalError, EvalResult};
pub use image::{ImageBuffer, ImageError};
pub use metrics::{ms_ssim, ms_ssim_db, psnr};
pub use rd::{evaluate_rd, load_images, NamedImage, RdAggregate, RdRecord, RdTable};
