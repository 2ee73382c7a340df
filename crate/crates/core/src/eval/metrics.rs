//! PSNR and MS-SSIM.
//!
//! MS-SSIM follows the reference construction: 11-tap Gaussian window
//! (sigma 1.5) applied separably without padding, constants from
//! `k1 = 0.01`, `k2 = 0.03` at unit data range, 2x2 average pooling between
//! scales (a trailing odd row/column is dropped), contrast-structure terms
//! at every scale but the last, full SSIM at the last. Each per-scale mean
//! is clamped to a small positive floor before the fractional power.
//!
//! The metric is built from graph ops, so the training loss
//! `1 - MS-SSIM` and the reported metric share this code path.

use super::image::ImageBuffer;
use crate::tensor::kernels::ConvGeom;
use crate::tensor::{Graph, Real, Result, Shape, Tensor, TensorError, Var};

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const FLOOR: f64 = 1e-6;

/// PSNR in dB of `[0, 1]` images; `+inf` for identical inputs.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let mse = mse(a, b)?;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_extents(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / n)
}

fn check_extents(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(TensorError::Shape {
            op: "metric",
            detail: format!("{}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height()),
        });
    }
    Ok(())
}

/// `-10 log10(1 - v)`.
pub fn ms_ssim_db(v: f64) -> f64 {
    -10.0 * (1.0 - v).log10()
}

/// Largest scale count `s <= 5` with `min(h, w) >= 2^(s-1) * 11`, or 0.
pub fn max_scales(h: usize, w: usize) -> usize {
    (1..=5).rev().find(|&s| h.min(w) >= (1 << (s - 1)) * WINDOW).unwrap_or(0)
}

/// Canonical weights for `scales` levels, renormalised to sum to one.
pub fn scale_weights(scales: usize) -> Vec<f64> {
    let w = &MS_SSIM_WEIGHTS[..scales];
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

fn gaussian_window() -> Vec<f64> {
    let c = (WINDOW / 2) as f64;
    let g: Vec<f64> = (0..WINDOW).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean MS-SSIM over the batch of two (N,C,H,W) images, as a graph scalar.
/// `scales = None` picks [`max_scales`]. Returns the value and the scale
/// count used.
pub fn ms_ssim_graph<T: Real>(g: &mut Graph<T>, x: Var, y: Var, scales: Option<usize>) -> Result<(Var, usize)> {
    let s = g.shape(x);
    if g.shape(y) != s {
        return Err(TensorError::Shape { op: "ms_ssim", detail: format!("{s} vs {}", g.shape(y)) });
    }
    let limit = max_scales(s.h(), s.w());
    let scales = scales.unwrap_or(limit);
    if scales == 0 || scales > 5 || scales > limit {
        let need = (1usize << scales.clamp(1, 5).saturating_sub(1)) * WINDOW;
        return Err(TensorError::Invalid {
            op: "ms_ssim",
            detail: format!("{}x{} is too small for {scales} scales (minimum side {need})", s.h(), s.w()),
        });
    }
    let weights = scale_weights(scales);
    let win = gaussian_window();
    let wv = g.constant(Tensor::from_fn(Shape::new(1, 1, WINDOW, 1), |i| T::from_f64(win[i])))?;
    let wh = g.constant(Tensor::from_fn(Shape::new(1, 1, 1, WINDOW), |i| T::from_f64(win[i])))?;
    let (n, c) = (s.n(), s.c());
    let c1 = T::from_f64(K1 * K1);
    let c2 = T::from_f64(K2 * K2);
    let two = T::from_f64(2.0);

    let mut xs = g.reshape(x, Shape::new(n * c, 1, s.h(), s.w()))?;
    let mut ys = g.reshape(y, Shape::new(n * c, 1, s.h(), s.w()))?;
    let mut acc: Option<Var> = None;
    for (level, &weight) in weights.iter().enumerate() {
        let blur = |g: &mut Graph<T>, v: Var| -> Result<Var> {
            let t = g.conv2d(v, wv, None, ConvGeom::new(1, 0))?;
            g.conv2d(t, wh, None, ConvGeom::new(1, 0))
        };
        let mu1 = blur(g, xs)?;
        let mu2 = blur(g, ys)?;
        let mu11 = g.mul(mu1, mu1)?;
        let mu22 = g.mul(mu2, mu2)?;
        let mu12 = g.mul(mu1, mu2)?;
        let xx = g.mul(xs, xs)?;
        let yy = g.mul(ys, ys)?;
        let xy = g.mul(xs, ys)?;
        let (bxx, byy, bxy) = (blur(g, xx)?, blur(g, yy)?, blur(g, xy)?);
        let s11 = g.sub(bxx, mu11)?;
        let s22 = g.sub(byy, mu22)?;
        let s12 = g.sub(bxy, mu12)?;
        let num = g.affine(s12, two, c2)?;
        let den = g.add(s11, s22)?;
        let den = g.affine(den, T::one(), c2)?;
        let mut map = g.div(num, den)?;
        if level + 1 == scales {
            let lnum = g.affine(mu12, two, c1)?;
            let lden = g.add(mu11, mu22)?;
            let lden = g.affine(lden, T::one(), c1)?;
            let l = g.div(lnum, lden)?;
            map = g.mul(l, map)?;
        }
        let ms = g.shape(map);
        let per_image = g.reshape(map, Shape::new(n, 1, c * ms.h(), ms.w()))?;
        let mean = g.mean_planes(per_image)?;
        let mean = g.clamp(mean, T::from_f64(FLOOR), T::max_value())?;
        let term = g.powf(mean, T::from_f64(weight))?;
        acc = Some(match acc {
            None => term,
            Some(a) => g.mul(a, term)?,
        });
        if level + 1 < scales {
            xs = g.avg_pool2(xs)?;
            ys = g.avg_pool2(ys)?;
        }
    }
    let v = g.mean(acc.expect("at least one scale"))?;
    Ok((v, scales))
}

/// MS-SSIM of two images, evaluated in double precision. Returns the value
/// and the scale count used.
pub fn ms_ssim(a: &ImageBuffer, b: &ImageBuffer, scales: Option<usize>) -> Result<(f64, usize)> {
    check_extents(a, b)?;
    let mut g = Graph::<f64>::new();
    let x = g.constant(a.to_tensor().cast())?;
    let y = g.constant(b.to_tensor().cast())?;
    let (v, s) = ms_ssim_graph(&mut g, x, y, scales)?;
    Ok((g.value(v).item(), s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(seed: usize) -> ImageBuffer {
        ImageBuffer::from_fn(64, 48, |c, y, x| (((x * 7 + y * 13 + c * 5 + seed) % 97) as f32 / 96.0) * 0.8 + 0.1)
    }

    #[test]
    fn psnr_of_constant_offset() {
        let a = ImageBuffer::from_fn(32, 32, |c, y, x| ((c + y + x) % 200) as f32 / 255.0);
        let b = ImageBuffer::from_fn(32, 32, |c, y, x| ((c + y + x) % 200 + 16) as f32 / 255.0);
        let p = psnr(&a, &b).unwrap();
        assert!((p - 20.0 * (255.0f64 / 16.0).log10()).abs() < 1e-4, "{p}");
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn identical_images_score_one() {
        let a = img(0);
        let (v, s) = ms_ssim(&a, &a, None).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
        assert_eq!(s, 3);
        let (ab, _) = ms_ssim(&a, &img(3), None).unwrap();
        let (ba, _) = ms_ssim(&img(3), &a, None).unwrap();
        assert!(ab < 1.0 && (ab - ba).abs() < 1e-12);
    }

    #[test]
    fn scale_selection() {
        assert_eq!(max_scales(768, 512), 5);
        assert_eq!(max_scales(64, 64), 3);
        assert_eq!(max_scales(10, 100), 0);
        assert!((scale_weights(3).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(ms_ssim(&img(0), &img(1), Some(4)).is_err());
        assert!((ms_ssim_db(0.99) - 20.0).abs() < 1e-9);
    }
}
