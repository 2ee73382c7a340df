use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::config::{ArchConfig, Metric, Quality, ANALYSIS_FACTOR, PAD_MULTIPLE};
use super::layers::{lrelu, Attention, Bound, Builder, Conv, Denoiser, DownStage, ParamId, ParamStore, Up, UpStage};
use crate::entropy::{self, factorized, SIGMA_FLOOR};
use crate::tensor::{Graph, Real, Result, Shape, Tensor, TensorError, Var};

/// Which input path feeds the analysis transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Clean input, no denoisers: `z0gt = g_a0(x)`, `z1gt = g_a1(z0gt)`.
    Guidance,
    /// Noisy input with residual denoisers after each half.
    Denoising,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub ga0: [DownStage; 2],
    pub ga1_stage: DownStage,
    pub ga1_out: Conv,
    pub ga1_att: Attention,
    pub d0: Denoiser,
    pub d1: Denoiser,
    pub ha: [Conv; 3],
    pub hs_up: [Up; 2],
    pub hs_out: Conv,
    pub ctx_w: ParamId,
    pub ctx_b: ParamId,
    pub head: [Conv; 2],
    pub gs_att: Attention,
    pub gs: [UpStage; 3],
    pub gs_out: Up,
    /// Matrices, then biases, then factors of the factorised prior.
    pub prior: Vec<ParamId>,
}

/// All learnable parameters of the codec plus its configuration.
///
/// The analysis transforms `g_a0`/`g_a1` exist once in the store; both
/// branches reference the same [`ParamId`]s, so weight sharing cannot drift.
#[derive(Debug, Clone)]
pub struct CodecModel<T: Real> {
    pub arch: ArchConfig,
    pub quality: Quality,
    pub metric: Metric,
    pub params: ParamStore<T>,
    pub(crate) layout: Layout,
}

/// Graph outputs of [`CodecModel::analyze`].
#[derive(Debug, Clone, Copy)]
pub struct Features {
    pub z0: Var,
    pub z1: Var,
}

/// Graph outputs of [`CodecModel::hyper_path`].
#[derive(Debug, Clone, Copy)]
pub struct HyperOutputs {
    pub z2: Var,
    pub z2_hat: Var,
    pub mu: Var,
    pub sigma: Var,
}

pub(crate) fn check_multiple(op: &'static str, shape: Shape, multiple: usize) -> Result<()> {
    if shape.h() == 0 || shape.w() == 0 || !shape.h().is_multiple_of(multiple) || !shape.w().is_multiple_of(multiple) {
        return Err(TensorError::Invalid {
            op,
            detail: format!("input {}x{} must be padded to a multiple of {multiple}", shape.h(), shape.w()),
        });
    }
    Ok(())
}

impl<T: Real> CodecModel<T> {
    /// Freshly initialised model. Denoiser output projections start at zero.
    pub fn new(arch: ArchConfig, quality: Quality, metric: Metric, seed: u64) -> std::result::Result<Self, String> {
        arch.validate()?;
        if quality.lambda(metric).is_none() {
            return Err(format!("no {metric} model is defined for {quality}"));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (n, m, h2) = (arch.n, arch.m, arch.hyper);
        let layout = {
            let mut p = Builder { store: &mut store, rng: &mut rng };
            let ga0 = [DownStage::new(&mut p, "g_a0.0", 3, n), DownStage::new(&mut p, "g_a0.1", n, n)];
            let ga1_stage = DownStage::new(&mut p, "g_a1.0", n, n);
            let ga1_out = Conv::new(&mut p, "g_a1.1", n, m, 3, 2);
            let ga1_att = Attention::new(&mut p, "g_a1.att", m);
            let d0 = Denoiser::new(&mut p, "d_0", n);
            let d1 = Denoiser::new(&mut p, "d_1", m);
            let ha = [
                Conv::new(&mut p, "h_a.0", m, n, 3, 1),
                Conv::new(&mut p, "h_a.1", n, n, 3, 2),
                Conv::new(&mut p, "h_a.2", n, h2, 3, 2),
            ];
            let hs_up = [Up::new(&mut p, "h_s.0", h2, n), Up::new(&mut p, "h_s.1", n, n)];
            let hs_out = Conv::new(&mut p, "h_s.2", n, 2 * m, 3, 1);
            let k = arch.context_kernel;
            let cb = 1.0 / ((m * k * k) as f64).sqrt();
            let ctx_w = p.uniform("context.weight".into(), Shape::new(2 * m, m, k, k), cb);
            let ctx_b = p.uniform("context.bias".into(), Shape::new(1, 2 * m, 1, 1), cb);
            let head_in = if arch.context { 4 * m } else { 2 * m };
            let head = [
                Conv::new(&mut p, "entropy_head.0", head_in, arch.head_hidden(), 1, 1),
                Conv::new(&mut p, "entropy_head.1", arch.head_hidden(), 2 * m, 1, 1),
            ];
            let gs_att = Attention::new(&mut p, "g_s.att", m);
            let gs = [UpStage::new(&mut p, "g_s.0", m, n), UpStage::new(&mut p, "g_s.1", n, n), UpStage::new(&mut p, "g_s.2", n, n)];
            let gs_out = Up::new(&mut p, "g_s.3", n, 3);
            let (mats, biases, factors) = factorized::init_params::<T>(h2, || p.rng.random_range(-0.5..0.5));
            let mut prior = Vec::new();
            for (i, t) in mats.into_iter().enumerate() {
                prior.push(p.store.push(format!("prior.matrix{i}"), t));
            }
            for (i, t) in biases.into_iter().enumerate() {
                prior.push(p.store.push(format!("prior.bias{i}"), t));
            }
            for (i, t) in factors.into_iter().enumerate() {
                prior.push(p.store.push(format!("prior.factor{i}"), t));
            }
            Layout {
                ga0,
                ga1_stage,
                ga1_out,
                ga1_att,
                d0,
                d1,
                ha,
                hs_up,
                hs_out,
                ctx_w,
                ctx_b,
                head,
                gs_att,
                gs,
                gs_out,
                prior,
            }
        };
        Ok(CodecModel { arch, quality, metric, params: store, layout })
    }

    pub fn lambda(&self) -> f64 {
        self.quality.lambda(self.metric).expect("validated at construction")
    }

    /// Same model in another precision.
    pub fn cast<U: Real>(&self) -> CodecModel<U> {
        CodecModel {
            arch: self.arch,
            quality: self.quality,
            metric: self.metric,
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Result<Bound> {
        self.params.bind(g, trainable)
    }

    /// Parameters of the shared analysis transform `g_a0`/`g_a1`.
    pub fn analysis_params(&self) -> Vec<ParamId> {
        self.params
            .iter()
            .filter(|(_, name, _)| name.starts_with("g_a0.") || name.starts_with("g_a1."))
            .map(|(id, _, _)| id)
            .collect()
    }

    /// Parameters of the two denoisers.
    pub fn denoiser_params(&self) -> Vec<ParamId> {
        self.params
            .iter()
            .filter(|(_, name, _)| name.starts_with("d_0.") || name.starts_with("d_1."))
            .map(|(id, _, _)| id)
            .collect()
    }

    /// Output projections of the denoisers (zero at initialisation).
    pub fn denoiser_output_params(&self) -> Vec<ParamId> {
        let mut v = self.layout.d0.output_params().to_vec();
        v.extend(self.layout.d1.output_params());
        v
    }

    pub fn g_a0(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        let h = self.layout.ga0[0].forward(g, b, x)?;
        self.layout.ga0[1].forward(g, b, h)
    }

    pub fn g_a1(&self, g: &mut Graph<T>, b: &Bound, z0: Var) -> Result<Var> {
        let h = self.layout.ga1_stage.forward(g, b, z0)?;
        let h = self.layout.ga1_out.forward(g, b, h)?;
        self.layout.ga1_att.forward(g, b, h)
    }

    /// Two-level analysis of an image whose sides are multiples of 16.
    pub fn analyze(&self, g: &mut Graph<T>, b: &Bound, x: Var, branch: Branch) -> Result<Features> {
        let s = g.shape(x);
        check_multiple("analyze", s, ANALYSIS_FACTOR)?;
        if s.c() != 3 {
            return Err(TensorError::Shape { op: "analyze", detail: format!("expected 3 channels, got {s}") });
        }
        let f0 = self.g_a0(g, b, x)?;
        let z0 = match branch {
            Branch::Guidance => f0,
            Branch::Denoising => {
                let d = self.layout.d0.forward(g, b, f0)?;
                g.add(f0, d)?
            }
        };
        let f1 = self.g_a1(g, b, z0)?;
        let z1 = match branch {
            Branch::Guidance => f1,
            Branch::Denoising => {
                let d = self.layout.d1.forward(g, b, f1)?;
                g.add(f1, d)?
            }
        };
        Ok(Features { z0, z1 })
    }

    pub fn h_a(&self, g: &mut Graph<T>, b: &Bound, z1: Var) -> Result<Var> {
        let [c0, c1, c2] = &self.layout.ha;
        let h = c0.forward(g, b, z1)?;
        let h = lrelu(g, h)?;
        let h = c1.forward(g, b, h)?;
        let h = lrelu(g, h)?;
        c2.forward(g, b, h)
    }

    /// Hyper synthesis, cropped to the latent extent `(h, w)`.
    pub fn h_s(&self, g: &mut Graph<T>, b: &Bound, z2_hat: Var, h: usize, w: usize) -> Result<Var> {
        let x = self.layout.hs_up[0].forward(g, b, z2_hat)?;
        let x = lrelu(g, x)?;
        let x = self.layout.hs_up[1].forward(g, b, x)?;
        let x = lrelu(g, x)?;
        let x = self.layout.hs_out.forward(g, b, x)?;
        g.crop(x, h, w)
    }

    /// Causal context features of `z1_hat`.
    pub fn context(&self, g: &mut Graph<T>, b: &Bound, z1_hat: Var) -> Result<Var> {
        g.masked_conv2d(z1_hat, b.var(self.layout.ctx_w), Some(b.var(self.layout.ctx_b)))
    }

    /// Mean and scale of `z1_hat` from hyper features (and context, when enabled).
    pub fn entropy_parameters(&self, g: &mut Graph<T>, b: &Bound, hyper: Var, z1_hat: Var) -> Result<(Var, Var)> {
        let input = if self.arch.context {
            let ctx = self.context(g, b, z1_hat)?;
            g.concat(&[ctx, hyper])?
        } else {
            hyper
        };
        let h = self.layout.head[0].forward(g, b, input)?;
        let h = lrelu(g, h)?;
        let out = self.layout.head[1].forward(g, b, h)?;
        let m = self.arch.m;
        let mu = g.narrow(out, 0, m)?;
        let raw = g.narrow(out, m, m)?;
        let sp = g.softplus(raw)?;
        let sigma = g.affine(sp, T::one(), T::from_f64(SIGMA_FLOOR))?;
        Ok((mu, sigma))
    }

    /// Training-mode hyper path: `z2 = h_a(z1)`, noisy `z2_hat`, then the
    /// Gaussian parameters of `z1_hat`.
    pub fn hyper_path(&self, g: &mut Graph<T>, b: &Bound, z1: Var, z1_hat: Var, rng: &mut ChaCha20Rng) -> Result<HyperOutputs> {
        let s = g.shape(z1);
        let z2 = self.h_a(g, b, z1)?;
        let z2_hat = quantize_noise(g, z2, rng)?;
        let hyper = self.h_s(g, b, z2_hat, s.h(), s.w())?;
        let (mu, sigma) = self.entropy_parameters(g, b, hyper, z1_hat)?;
        Ok(HyperOutputs { z2, z2_hat, mu, sigma })
    }

    /// Likelihoods of the hyper-latent under the factorised prior.
    pub fn prior_likelihood(&self, g: &mut Graph<T>, b: &Bound, z2_hat: Var) -> Result<Var> {
        let vars: Vec<Var> = self.layout.prior.iter().map(|&id| b.var(id)).collect();
        factorized::likelihood(g, z2_hat, &vars)
    }

    /// Likelihoods of `z1_hat` under the predicted Gaussians.
    pub fn latent_likelihood(&self, g: &mut Graph<T>, z1_hat: Var, mu: Var, sigma: Var) -> Result<Var> {
        entropy::gaussian_likelihood(g, z1_hat, mu, sigma)
    }

    /// Synthesis transform; output is 16x the latent extent, unclamped.
    pub fn synthesize(&self, g: &mut Graph<T>, b: &Bound, z1_hat: Var) -> Result<Var> {
        let s = g.shape(z1_hat);
        if s.c() != self.arch.m {
            return Err(TensorError::Shape { op: "synthesize", detail: format!("expected {} channels, got {s}", self.arch.m) });
        }
        let mut h = self.layout.gs_att.forward(g, b, z1_hat)?;
        for stage in &self.layout.gs {
            h = stage.forward(g, b, h)?;
        }
        self.layout.gs_out.forward(g, b, h)
    }

    /// Coding view of the factorised prior.
    pub fn prior(&self) -> Result<entropy::FactorizedPrior> {
        let k = factorized::stage_dims().len();
        let t: Vec<&Tensor<T>> = self.layout.prior.iter().map(|&id| self.params.get(id)).collect();
        entropy::FactorizedPrior::from_params(&t[..k], &t[k..2 * k], &t[2 * k..])
    }

    /// Checks an image for the public codec entry points (multiple of 64).
    pub fn check_padded(shape: Shape) -> Result<()> {
        check_multiple("codec input", shape, PAD_MULTIPLE)
    }
}

/// Training quantisation surrogate: `z + u`, `u ~ U(-0.5, 0.5)` drawn from `rng`.
pub fn quantize_noise<T: Real>(g: &mut Graph<T>, z: Var, rng: &mut ChaCha20Rng) -> Result<Var> {
    let s = g.shape(z);
    let u = g.constant(Tensor::from_fn(s, |_| T::from_f64(rng.random_range(-0.5..0.5))))?;
    g.add(z, u)
}

/// Inference quantisation: `round(z - mu) + mu`, half away from zero.
pub fn quantize_round<T: Real>(z: &Tensor<T>, mu: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    match mu {
        None => Ok(Tensor::from_fn(z.shape(), |i| z.data()[i].round())),
        Some(mu) => {
            if mu.shape() != z.shape() {
                return Err(TensorError::Shape { op: "quantize", detail: format!("z {} vs mu {}", z.shape(), mu.shape()) });
            }
            Ok(Tensor::from_fn(z.shape(), |i| (z.data()[i] - mu.data()[i]).round() + mu.data()[i]))
        }
    }
}
