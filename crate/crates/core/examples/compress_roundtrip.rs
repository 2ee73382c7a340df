//! Compresses a noisy image to a `.jdc` container and decodes it again,
//! checking that the decoder reproduces the encoder's reconstruction.
//!
//! cargo run --release --example compress_roundtrip -- [checkpoint.jdcm]
//!
//! Without a checkpoint an untrained desk model is used.

use std::path::Path;

use noisecodec::eval::{compress, decompress, psnr, ImageBuffer};
use noisecodec::net::{ArchConfig, CodecModel, Metric, Quality};
use noisecodec::noise::{synthesize_noise, GainPreset};
use noisecodec::train::Dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = match std::env::args().nth(1) {
        Some(path) => CodecModel::<f32>::load(Path::new(&path))?,
        None => CodecModel::new(ArchConfig::desk(), "q3".parse::<Quality>()?, Metric::Mse, 0)?,
    };
    let clean = Dataset::synthetic(1, 100, 5).images()[0].clone();
    let noisy = ImageBuffer::new(100, 100, synthesize_noise(clean.data(), &GainPreset::Gain4.params(), 1))?.quantized();

    let c = compress(&model, &noisy)?;
    let decoded = decompress(&model, &c.bytes)?;
    assert_eq!(decoded, c.reconstruction, "decoder must match the encoder");
    let again = compress(&model, &noisy)?;
    assert_eq!(again.bytes, c.bytes, "re-encoding must be byte-identical");

    println!(
        "{}x{} -> {} bytes ({:.4} bpp, estimate {:.4} bpp); PSNR vs clean {:.2} dB",
        decoded.width(),
        decoded.height(),
        c.bytes.len(),
        c.bpp(),
        c.estimated_bits / 10_000.0,
        psnr(&decoded, &clean)?
    );
    Ok(())
}
