//! Inference: quantisation, entropy coding of the latents and reconstruction.
//!
//! With the context model enabled, the mean and scale of each latent
//! position depend on previously quantised positions. Encoder and decoder
//! both run [`Sequential::params_at`] in raster order, so they compute
//! bit-identical parameters and hence identical frequency tables.
//!
//! Symbol layout: z2 is coded channel-major as `clamp(round(z2), -T, T)`
//! under per-channel tables of the factorised prior. z1 is coded
//! position-major, channel-minor, as the residual
//! `r = clamp(round(z1 - mu), -T, T)` under `N(0, sigma)`; the decoder
//! restores `z1_hat = mu + r`.

use super::config::Quality;
use super::model::CodecModel;
use crate::entropy::rans::{RansDecoder, RansEncoder};
use crate::entropy::{Bitstream, DiscretizedGaussian, EntropyError, FrequencyTable, TAIL_BINS};
use crate::net::config::{Metric, ANALYSIS_FACTOR};
use crate::net::layers::LEAKY_SLOPE;
use crate::net::model::Branch;
use crate::tensor::{softplus, Graph, Shape, Tensor};
use crate::entropy::SIGMA_FLOOR;

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
}

pub type CodecResult<T> = std::result::Result<T, CodecError>;

/// Reflect-pads the bottom and right edges of an (N,C,H,W) image up to the
/// next multiple. Returns the padded image and the original `(h, w)`.
pub fn pad_reflect(x: &Tensor<f32>, multiple: usize) -> (Tensor<f32>, (usize, usize)) {
    let [n, c, h, w] = x.shape().0;
    let ph = h.div_ceil(multiple) * multiple;
    let pw = w.div_ceil(multiple) * multiple;
    if (ph, pw) == (h, w) {
        return (x.clone(), (h, w));
    }
    // Reflection about the last row/column, continued periodically for
    // images smaller than the pad amount.
    let reflect = |i: usize, len: usize| -> usize {
        if len == 1 {
            return 0;
        }
        let period = 2 * (len - 1);
        let r = i % period;
        if r < len {
            r
        } else {
            period - r
        }
    };
    let src = x.data();
    let out = Tensor::from_fn(Shape::new(n, c, ph, pw), |i| {
        let (p, rem) = (i / (ph * pw), i % (ph * pw));
        let (y, xx) = (reflect(rem / pw, h), reflect(rem % pw, w));
        src[p * h * w + y * w + xx]
    });
    (out, (h, w))
}

/// Everything produced on the encoder side for one image.
#[derive(Debug, Clone)]
pub struct LatentBundle {
    /// Denoised latent before quantisation.
    pub z1: Tensor<f32>,
    pub z2: Tensor<f32>,
    pub z1_hat: Tensor<f32>,
    pub z2_hat: Tensor<f32>,
    pub mu: Tensor<f32>,
    pub sigma: Tensor<f32>,
    /// Coded residual symbols of z1 in coding order.
    pub z1_symbols: Vec<i32>,
    /// Coded symbols of z2 in coding order.
    pub z2_symbols: Vec<i32>,
}

/// Per-position entropy-parameter evaluation outside the graph.
struct Sequential<'a> {
    m: usize,
    h: usize,
    w: usize,
    k: usize,
    context: bool,
    ctx_w: Vec<f32>,
    ctx_b: &'a [f32],
    head0_w: &'a [f32],
    head0_b: &'a [f32],
    head1_w: &'a [f32],
    head1_b: &'a [f32],
    hidden: usize,
    /// h_s output, (2M, h, w).
    hyper: &'a [f32],
}

impl<'a> Sequential<'a> {
    fn new(model: &'a CodecModel<f32>, hyper: &'a [f32], h: usize, w: usize) -> Self {
        let l = &model.layout;
        let p = &model.params;
        let k = model.arch.context_kernel;
        let masked = crate::tensor::kernels::apply_mask_a(p.get(l.ctx_w)).expect("odd context kernel");
        Sequential {
            m: model.arch.m,
            h,
            w,
            k,
            context: model.arch.context,
            ctx_w: masked.into_data(),
            ctx_b: p.get(l.ctx_b).data(),
            head0_w: p.get(l.head[0].w).data(),
            head0_b: p.get(l.head[0].b).data(),
            head1_w: p.get(l.head[1].w).data(),
            head1_b: p.get(l.head[1].b).data(),
            hidden: model.arch.head_hidden(),
            hyper,
        }
    }

    /// Mean and scale of all channels at `(y, x)` given the quantised
    /// latent `z_hat` (M, h, w), of which only raster-earlier positions are
    /// read.
    fn params_at(&self, z_hat: &[f32], y: usize, x: usize, mu: &mut [f32], sigma: &mut [f32]) {
        let (m, h, w, k) = (self.m, self.h, self.w, self.k);
        let plane = h * w;
        let mut input = Vec::with_capacity(4 * m);
        if self.context {
            let r = (k / 2) as isize;
            for o in 0..2 * m {
                let mut acc = self.ctx_b[o];
                for c in 0..m {
                    for ky in 0..k {
                        let yy = y as isize + ky as isize - r;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let xx = x as isize + kx as isize - r;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            let wv = self.ctx_w[((o * m + c) * k + ky) * k + kx];
                            if wv != 0.0 {
                                acc += wv * z_hat[c * plane + yy as usize * w + xx as usize];
                            }
                        }
                    }
                }
                input.push(acc);
            }
        }
        for c in 0..2 * m {
            input.push(self.hyper[c * plane + y * w + x]);
        }
        let hidden: Vec<f32> = (0..self.hidden)
            .map(|j| {
                let row = &self.head0_w[j * input.len()..(j + 1) * input.len()];
                let v = row.iter().zip(&input).fold(self.head0_b[j], |a, (&wv, &iv)| a + wv * iv);
                if v > 0.0 {
                    v
                } else {
                    v * LEAKY_SLOPE as f32
                }
            })
            .collect();
        for o in 0..2 * m {
            let row = &self.head1_w[o * self.hidden..(o + 1) * self.hidden];
            let v = row.iter().zip(&hidden).fold(self.head1_b[o], |a, (&wv, &hv)| a + wv * hv);
            if o < m {
                mu[o] = v;
            } else {
                sigma[o - m] = softplus(v) + SIGMA_FLOOR as f32;
            }
        }
    }
}

fn residual_table(sigma: f32) -> Result<FrequencyTable, EntropyError> {
    Ok(DiscretizedGaussian::new(0.0, sigma as f64)?.table())
}

impl CodecModel<f32> {
    fn check_batch(x: &Tensor<f32>) -> CodecResult<()> {
        if x.shape().n() != 1 {
            return Err(crate::tensor::TensorError::Invalid {
                op: "codec",
                detail: format!("codec entry points take one image, got batch {}", x.shape().n()),
            }
            .into());
        }
        Ok(())
    }

    /// Runs `h_s` on quantised hyper-latents; output cropped to `(h, w)`.
    fn hyper_features(&self, z2_hat: &Tensor<f32>, h: usize, w: usize) -> CodecResult<Tensor<f32>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false)?;
        let z = g.constant(z2_hat.clone())?;
        let out = self.h_s(&mut g, &b, z, h, w)?;
        Ok(g.value(out).clone())
    }

    /// Encoder side on a padded image (sides multiples of 64): denoising
    /// analysis, hyper path, sequential quantisation of z1.
    pub fn encode_latents(&self, x: &Tensor<f32>) -> CodecResult<LatentBundle> {
        Self::check_padded(x.shape())?;
        Self::check_batch(x)?;
        let mut g = Graph::new();
        let b = self.bind(&mut g, false)?;
        let xv = g.constant(x.clone())?;
        let f = self.analyze(&mut g, &b, xv, Branch::Denoising)?;
        let z2v = self.h_a(&mut g, &b, f.z1)?;
        let z1 = g.value(f.z1).clone();
        let z2 = g.value(z2v).clone();
        drop(g);

        let t = TAIL_BINS as f32;
        let z2_hat = Tensor::from_fn(z2.shape(), |i| z2.data()[i].round().clamp(-t, t));
        let z2_symbols: Vec<i32> = z2_hat.data().iter().map(|&v| v as i32).collect();

        let s = z1.shape();
        let (m, h, w) = (s.c(), s.h(), s.w());
        let hyper = self.hyper_features(&z2_hat, h, w)?;
        let seq = Sequential::new(self, hyper.data(), h, w);
        let plane = h * w;
        let mut z1_hat = vec![0f32; m * plane];
        let mut mu = vec![0f32; m * plane];
        let mut sigma = vec![0f32; m * plane];
        let mut z1_symbols = Vec::with_capacity(m * plane);
        let (mut mu_p, mut sig_p) = (vec![0f32; m], vec![0f32; m]);
        for y in 0..h {
            for x in 0..w {
                seq.params_at(&z1_hat, y, x, &mut mu_p, &mut sig_p);
                for c in 0..m {
                    let i = c * plane + y * w + x;
                    let r = (z1.data()[i] - mu_p[c]).round().clamp(-t, t);
                    z1_symbols.push(r as i32);
                    z1_hat[i] = mu_p[c] + r;
                    mu[i] = mu_p[c];
                    sigma[i] = sig_p[c];
                }
            }
        }
        Ok(LatentBundle {
            z1,
            z2,
            z1_hat: Tensor::from_vec(s, z1_hat)?,
            z2_hat,
            mu: Tensor::from_vec(s, mu)?,
            sigma: Tensor::from_vec(s, sigma)?,
            z1_symbols,
            z2_symbols,
        })
    }

    /// Entropy-codes a bundle into a container for an image of original
    /// size `(height, width)`.
    pub fn compress_latents(&self, bundle: &LatentBundle, height: usize, width: usize) -> CodecResult<Bitstream> {
        let prior_tables = self.prior()?.tables();
        let s2 = bundle.z2_hat.shape();
        let plane2 = s2.plane();
        let mut enc = RansEncoder::new();
        for (i, &sym) in bundle.z2_symbols.iter().enumerate() {
            enc.push(&prior_tables[i / plane2 % s2.c()], sym)?;
        }
        let z2 = enc.finish();

        let s1 = bundle.z1_hat.shape();
        let (m, plane) = (s1.c(), s1.plane());
        let mut enc = RansEncoder::new();
        for (j, &sym) in bundle.z1_symbols.iter().enumerate() {
            let (pos, c) = (j / m, j % m);
            enc.push(&residual_table(bundle.sigma.data()[c * plane + pos])?, sym)?;
        }
        let z1 = enc.finish();
        Ok(Bitstream {
            context: self.arch.context,
            msssim: self.metric == Metric::MsSsim,
            quality: self.quality.level(),
            width: width as u32,
            height: height as u32,
            padded_width: (s1.w() * ANALYSIS_FACTOR) as u32,
            padded_height: (s1.h() * ANALYSIS_FACTOR) as u32,
            z2,
            z1,
        })
    }

    /// Refuses streams produced by a differently configured model.
    pub fn check_stream(&self, bs: &Bitstream) -> CodecResult<()> {
        let mismatch = |what: String| Err(EntropyError::Mismatch(what).into());
        if Quality::new(bs.quality) != Some(self.quality) {
            return mismatch(format!("stream quality q{} but model {}", bs.quality, self.quality));
        }
        if bs.context != self.arch.context {
            return mismatch(format!("stream context flag {} but model {}", bs.context, self.arch.context));
        }
        if bs.msssim != (self.metric == Metric::MsSsim) {
            return mismatch(format!("stream metric flag {} but model {}", bs.msssim, self.metric));
        }
        let pad = super::config::PAD_MULTIPLE as u32;
        if !bs.padded_width.is_multiple_of(pad) || !bs.padded_height.is_multiple_of(pad) {
            return mismatch(format!("padded size {}x{} not a multiple of {pad}", bs.padded_width, bs.padded_height));
        }
        Ok(())
    }

    /// Decodes `(z2_hat, z1_hat)` from a container.
    pub fn decompress_latents(&self, bs: &Bitstream) -> CodecResult<(Tensor<f32>, Tensor<f32>)> {
        self.check_stream(bs)?;
        let (h, w) = (bs.padded_height as usize / ANALYSIS_FACTOR, bs.padded_width as usize / ANALYSIS_FACTOR);
        let (h2, w2) = (h / 4, w / 4);
        let prior_tables = self.prior()?.tables();
        let s2 = Shape::new(1, self.arch.hyper, h2, w2);
        let mut dec = RansDecoder::new(&bs.z2)?;
        let mut z2 = Vec::with_capacity(s2.numel());
        for i in 0..s2.numel() {
            z2.push(dec.decode(&prior_tables[i / s2.plane()])? as f32);
        }
        dec.finish()?;
        let z2_hat = Tensor::from_vec(s2, z2)?;

        let m = self.arch.m;
        let hyper = self.hyper_features(&z2_hat, h, w)?;
        let seq = Sequential::new(self, hyper.data(), h, w);
        let plane = h * w;
        let mut z1_hat = vec![0f32; m * plane];
        let (mut mu_p, mut sig_p) = (vec![0f32; m], vec![0f32; m]);
        let mut dec = RansDecoder::new(&bs.z1)?;
        for y in 0..h {
            for x in 0..w {
                seq.params_at(&z1_hat, y, x, &mut mu_p, &mut sig_p);
                for c in 0..m {
                    let r = dec.decode(&residual_table(sig_p[c])?)?;
                    z1_hat[c * plane + y * w + x] = mu_p[c] + r as f32;
                }
            }
        }
        dec.finish()?;
        Ok((z2_hat, Tensor::from_vec(Shape::new(1, m, h, w), z1_hat)?))
    }

    /// Synthesis of quantised latents at the padded size, unclamped.
    pub fn reconstruct(&self, z1_hat: &Tensor<f32>) -> CodecResult<Tensor<f32>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false)?;
        let z = g.constant(z1_hat.clone())?;
        let x = self.synthesize(&mut g, &b, z)?;
        Ok(g.value(x).clone())
    }

    /// Full encoder on an (1,3,H,W) image in `[0, 1]`: returns the container
    /// and the encoder-side reconstruction (cropped, clamped to `[0, 1]`).
    pub fn compress_image(&self, x: &Tensor<f32>) -> CodecResult<(Bitstream, Tensor<f32>, LatentBundle)> {
        Self::check_batch(x)?;
        let (padded, (h, w)) = pad_reflect(x, super::config::PAD_MULTIPLE);
        let bundle = self.encode_latents(&padded)?;
        let bs = self.compress_latents(&bundle, h, w)?;
        let recon = finish_image(&self.reconstruct(&bundle.z1_hat)?, h, w)?;
        Ok((bs, recon, bundle))
    }

    /// Decoder: container to cropped, clamped image.
    pub fn decompress_image(&self, bs: &Bitstream) -> CodecResult<Tensor<f32>> {
        let (_, z1_hat) = self.decompress_latents(bs)?;
        finish_image(&self.reconstruct(&z1_hat)?, bs.height as usize, bs.width as usize)
    }

    /// Bits the coder's own tables assign to a bundle: `(z1 bits, z2 bits)`.
    pub fn rate_estimate(&self, bundle: &LatentBundle) -> CodecResult<(f64, f64)> {
        let prior_tables = self.prior()?.tables();
        let s2 = bundle.z2_hat.shape();
        let mut z2_bits = 0.0;
        for (i, &sym) in bundle.z2_symbols.iter().enumerate() {
            z2_bits += prior_tables[i / s2.plane() % s2.c()].bits(sym)?;
        }
        let s1 = bundle.z1_hat.shape();
        let (m, plane) = (s1.c(), s1.plane());
        let mut z1_bits = 0.0;
        for (j, &sym) in bundle.z1_symbols.iter().enumerate() {
            z1_bits += residual_table(bundle.sigma.data()[(j % m) * plane + j / m])?.bits(sym)?;
        }
        Ok((z1_bits, z2_bits))
    }
}

/// Crops to `(h, w)` and clamps to `[0, 1]`.
pub fn finish_image(x: &Tensor<f32>, h: usize, w: usize) -> CodecResult<Tensor<f32>> {
    let c = x.crop(h, w)?;
    Ok(Tensor::from_fn(c.shape(), |i| c.data()[i].clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_extents_and_inverse() {
        let x = Tensor::from_fn(Shape::new(1, 3, 100, 70), |i| (i % 251) as f32 / 250.0);
        let (p, (h, w)) = pad_reflect(&x, 64);
        assert_eq!(p.shape(), Shape::new(1, 3, 128, 128));
        assert_eq!((h, w), (100, 70));
        assert_eq!(p.crop(h, w).unwrap(), x);
        // Reflection: padded row 100 mirrors row 98.
        assert_eq!(p.get(0, 1, 100, 5), x.get(0, 1, 98, 5));
        let same = Tensor::from_fn(Shape::new(1, 3, 64, 128), |i| i as f32);
        assert_eq!(pad_reflect(&same, 64).0, same);
        let tiny = Tensor::from_fn(Shape::new(1, 3, 2, 3), |i| i as f32);
        assert_eq!(pad_reflect(&tiny, 64).0.shape(), Shape::new(1, 3, 64, 64));
    }

    #[test]
    fn untrained_model_round_trips() {
        use crate::net::{ArchConfig, Metric, Quality};
        let model = CodecModel::<f32>::new(ArchConfig::desk(), Quality::new(3).unwrap(), Metric::Mse, 1).unwrap();
        let x = Tensor::from_fn(Shape::new(1, 3, 70, 90), |i| ((i * 37) % 101) as f32 / 100.0);
        let (bs, recon, _) = model.compress_image(&x).unwrap();
        let bytes = bs.to_bytes();
        let back = Bitstream::from_bytes(&bytes).unwrap();
        let out = model.decompress_image(&back).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 3, 70, 90));
        assert_eq!(out, recon);
    }
}
