//! Adds each gain preset's sensor noise to a synthetic image, writes the
//! results as PNGs and reports PSNR and MS-SSIM against the clean image.
//!
//! cargo run --release --example synth_noise -- [out-dir]

use std::path::PathBuf;

use noisecodec::eval::{ms_ssim, psnr, ImageBuffer};
use noisecodec::noise::{synthesize_noise, GainPreset};
use noisecodec::train::Dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "noise_samples".into()));
    std::fs::create_dir_all(&out)?;
    let clean = Dataset::synthetic(1, 128, 3).images()[0].clone();
    clean.save(&out.join("clean.png"))?;
    for preset in GainPreset::ALL {
        let p = preset.params();
        let noisy = ImageBuffer::new(128, 128, synthesize_noise(clean.data(), &p, 7))?;
        noisy.save(&out.join(format!("{}.png", preset.name())))?;
        let (ms, _) = ms_ssim(&clean, &noisy, None)?;
        println!(
            "{}: sigma_r {:.4}, sigma_s {:.4}, PSNR {:.2} dB, MS-SSIM {:.4}",
            preset.name(),
            p.sigma_r,
            p.sigma_s,
            psnr(&clean, &noisy)?,
            ms
        );
    }
    println!("images written to {}", out.display());
    Ok(())
}
