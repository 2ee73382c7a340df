//! PSNR and MS-SSIM on a few reference cases.
//!
//! cargo run --release --example metrics

use noisecodec::eval::metrics::{max_scales, ms_ssim_db};
use noisecodec::eval::{ms_ssim, psnr, ImageBuffer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a = ImageBuffer::from_fn(96, 96, |c, y, x| ((x * 2 + y + c * 30) % 200) as f32 / 255.0);
    let shifted = ImageBuffer::from_fn(96, 96, |c, y, x| a.get(c, y, x) + 16.0 / 255.0);
    println!("PSNR of a 16/255 offset: {:.4} dB", psnr(&a, &shifted)?);
    println!("PSNR(a, a) = {}", psnr(&a, &a)?);

    let (v, scales) = ms_ssim(&a, &a, None)?;
    println!("MS-SSIM(a, a) = {v} over {scales} scales (max for 96x96: {})", max_scales(96, 96));
    let blurred = ImageBuffer::from_fn(96, 96, |c, y, x| {
        let (x0, x1) = (x.saturating_sub(1), (x + 1).min(95));
        (a.get(c, y, x0) + a.get(c, y, x) + a.get(c, y, x1)) / 3.0
    });
    let (v, _) = ms_ssim(&a, &blurred, None)?;
    println!("MS-SSIM(a, blurred) = {v:.6} = {:.3} dB", ms_ssim_db(v));
    Ok(())
}
