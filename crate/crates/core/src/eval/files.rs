//! File-level compression: image file to `.jdc` container and back.

use std::path::Path;

use super::image::{ImageBuffer, ImageError};
use crate::entropy::{Bitstream, EntropyError};
use crate::net::{CheckpointError, CodecError, CodecModel};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

impl From<EntropyError> for EvalError {
    fn from(e: EntropyError) -> Self {
        EvalError::Codec(e.into())
    }
}

pub type EvalResult<T> = std::result::Result<T, EvalError>;

/// Result of compressing one image.
#[derive(Debug, Clone)]
pub struct Compressed {
    /// Serialised container.
    pub bytes: Vec<u8>,
    /// Encoder-side reconstruction at the original size, in `[0, 1]`.
    pub reconstruction: ImageBuffer,
    /// Coder-table estimate of the payload size in bits.
    pub estimated_bits: f64,
}

impl Compressed {
    /// Container bits per original pixel.
    pub fn bpp(&self) -> f64 {
        (self.bytes.len() * 8) as f64 / (self.reconstruction.width() * self.reconstruction.height()) as f64
    }
}

/// Pads, analyses through the denoising branch, quantises and entropy-codes.
pub fn compress(model: &CodecModel<f32>, image: &ImageBuffer) -> EvalResult<Compressed> {
    let (bs, recon, bundle) = model.compress_image(&image.to_tensor())?;
    let (z1_bits, z2_bits) = model.rate_estimate(&bundle)?;
    Ok(Compressed {
        bytes: bs.to_bytes(),
        reconstruction: ImageBuffer::from_tensor(&recon)?,
        estimated_bits: z1_bits + z2_bits,
    })
}

/// Parses and decodes a container; refuses streams from another model.
pub fn decompress(model: &CodecModel<f32>, bytes: &[u8]) -> EvalResult<ImageBuffer> {
    let bs = Bitstream::from_bytes(bytes)?;
    let x = model.decompress_image(&bs)?;
    Ok(ImageBuffer::from_tensor(&x)?)
}

fn read(path: &Path) -> EvalResult<Vec<u8>> {
    std::fs::read(path).map_err(|source| EvalError::Io { path: path.display().to_string(), source })
}

fn write(path: &Path, bytes: &[u8]) -> EvalResult<()> {
    std::fs::write(path, bytes).map_err(|source| EvalError::Io { path: path.display().to_string(), source })
}

/// Compresses an image file into a `.jdc` file.
pub fn compress_file(model: &CodecModel<f32>, input: &Path, output: &Path) -> EvalResult<Compressed> {
    let image = ImageBuffer::load(input)?;
    let c = compress(model, &image)?;
    write(output, &c.bytes)?;
    Ok(c)
}

/// Decodes a `.jdc` file into an image file (PNG or PPM by extension).
pub fn decompress_file(model: &CodecModel<f32>, input: &Path, output: &Path) -> EvalResult<ImageBuffer> {
    let image = decompress(model, &read(input)?)?;
    image.save(output)?;
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{ArchConfig, Metric, Quality};

    #[test]
    fn file_round_trip_and_guards() {
        let model = CodecModel::<f32>::new(ArchConfig::desk(), Quality::new(2).unwrap(), Metric::Mse, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("in.png");
        ImageBuffer::from_fn(40, 30, |c, y, x| ((x + 2 * y + 50 * c) % 256) as f32 / 255.0).save(&src).unwrap();
        let jdc = dir.path().join("a.jdc");
        let c = compress_file(&model, &src, &jdc).unwrap();
        let out = decompress_file(&model, &jdc, &dir.path().join("out.png")).unwrap();
        assert_eq!((out.width(), out.height()), (40, 30));
        assert_eq!(out, c.reconstruction);

        let other = CodecModel::<f32>::new(ArchConfig::desk(), Quality::new(5).unwrap(), Metric::Mse, 3).unwrap();
        assert!(matches!(decompress(&other, &c.bytes), Err(EvalError::Codec(CodecError::Entropy(EntropyError::Mismatch(_))))));
        let mut bad = c.bytes.clone();
        let n = bad.len();
        bad[n - 6] ^= 1;
        assert!(decompress(&model, &bad).is_err());
    }
}
