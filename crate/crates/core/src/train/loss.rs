//! Rate-distortion and guidance objectives.

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::factorized::LIKELIHOOD_BOUND;
use crate::eval::metrics::ms_ssim_graph;
use crate::net::{quantize_noise, Bound, Branch, CodecModel, Metric};
use crate::tensor::{Graph, Real, Result, Tensor, TensorError, Var};

/// Scale of the MSE distortion: errors are measured on the 0..255 range so
/// the ladder of `lambda_d` values applies unchanged.
pub const MSE_SCALE: f64 = 255.0 * 255.0;

/// Values of one objective evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub bpp_z1: f64,
    pub bpp_z2: f64,
    /// Distortion: `255^2 * MSE` or `1 - MS-SSIM`.
    pub d: f64,
    /// Guidance loss, zero outside fine-tuning.
    pub g: f64,
    /// `bpp_z1 + bpp_z2 + lambda_d * d + lambda_g * g`.
    pub total: f64,
}

impl LossReport {
    /// `bpp_z1 + bpp_z2 + lambda_d * d`: the objective without guidance.
    pub fn rd(&self, lambda_d: f64) -> f64 {
        self.bpp_z1 + self.bpp_z2 + lambda_d * self.d
    }
}

/// Graph handles of an rate-distortion evaluation.
#[derive(Debug, Clone, Copy)]
pub struct RdVars {
    pub total: Var,
    pub bpp_z1: Var,
    pub bpp_z2: Var,
    pub d: Var,
}

/// `-sum(log2 p) / pixels` with likelihoods bounded below.
fn bits_per_pixel<T: Real>(g: &mut Graph<T>, lik: Var, pixels: usize) -> Result<Var> {
    let l = g.lower_bound(lik, T::from_f64(LIKELIHOOD_BOUND))?;
    let ln = g.ln(l)?;
    let s = g.sum(ln)?;
    g.scale(s, T::from_f64(-1.0 / (std::f64::consts::LN_2 * pixels as f64)))
}

/// Distortion between the target `x` and reconstruction `x_hat` (unclamped).
pub fn distortion<T: Real>(g: &mut Graph<T>, x: Var, x_hat: Var, metric: Metric) -> Result<Var> {
    match metric {
        Metric::Mse => {
            let diff = g.sub(x, x_hat)?;
            let sq = g.mul(diff, diff)?;
            let m = g.mean(sq)?;
            g.scale(m, T::from_f64(MSE_SCALE))
        }
        Metric::MsSsim => {
            let (v, _) = ms_ssim_graph(g, x, x_hat, None)?;
            g.affine(v, -T::one(), T::one())
        }
    }
}

/// `R(z1) + R(z2) + lambda_d * D` with rates in bits per pixel of `x`.
pub fn rd_loss<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    x_hat: Var,
    lik_z1: Var,
    lik_z2: Var,
    lambda_d: f64,
    metric: Metric,
) -> Result<RdVars> {
    let s = g.shape(x);
    if g.shape(x_hat) != s {
        return Err(TensorError::Shape { op: "rd_loss", detail: format!("x {s} vs x_hat {}", g.shape(x_hat)) });
    }
    let pixels = s.n() * s.h() * s.w();
    let bpp_z1 = bits_per_pixel(g, lik_z1, pixels)?;
    let bpp_z2 = bits_per_pixel(g, lik_z2, pixels)?;
    let d = distortion(g, x, x_hat, metric)?;
    let rate = g.add(bpp_z1, bpp_z2)?;
    let wd = g.scale(d, T::from_f64(lambda_d))?;
    let total = g.add(rate, wd)?;
    Ok(RdVars { total, bpp_z1, bpp_z2, d })
}

/// `mean|z0 - z0gt| + mean|z1 - z1gt|`.
pub fn guidance_loss<T: Real>(g: &mut Graph<T>, z0: Var, z0_gt: Var, z1: Var, z1_gt: Var) -> Result<Var> {
    let term = |g: &mut Graph<T>, a: Var, b: Var| -> Result<Var> {
        if g.shape(a) != g.shape(b) {
            return Err(TensorError::Shape { op: "guidance_loss", detail: format!("{} vs {}", g.shape(a), g.shape(b)) });
        }
        let d = g.sub(a, b)?;
        let d = g.abs(d)?;
        g.mean(d)
    };
    let a = term(g, z0, z0_gt)?;
    let b = term(g, z1, z1_gt)?;
    g.add(a, b)
}

/// Which objective a forward pass evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Guidance branch on clean images, `L_rd` only.
    Pretrain,
    /// Denoising branch on noisy images plus the detached guidance targets,
    /// `L_rd + lambda_g * G`.
    Finetune,
}

/// Graph handles of a full objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveVars {
    pub total: Var,
    pub rd: RdVars,
    pub guidance: Option<Var>,
    pub x_hat: Var,
}

/// Forward pass of the training objective.
///
/// `source` feeds the analysis transform and `clean` is the distortion
/// target (they coincide when pretraining). Quantisation noise is drawn
/// from `rng`: first for z1, then for z2. With `lambda_g = None` the
/// guidance term is not evaluated (validation). When fine-tuning, the
/// guidance features of `clean` are computed in the same graph and
/// detached.
#[allow(clippy::too_many_arguments)]
pub fn objective<T: Real>(
    g: &mut Graph<T>,
    b: &Bound,
    model: &CodecModel<T>,
    source: Var,
    clean: Var,
    stage: Stage,
    lambda_g: Option<f64>,
    rng: &mut ChaCha20Rng,
) -> Result<ObjectiveVars> {
    let targets = match (stage, lambda_g) {
        (Stage::Finetune, Some(_)) => {
            let gt = model.analyze(g, b, clean, Branch::Guidance)?;
            Some((g.detach(gt.z0), g.detach(gt.z1)))
        }
        _ => None,
    };
    objective_with_targets(g, b, model, source, clean, stage, lambda_g.zip(targets), rng)
}

/// Guidance features `(z0gt, z1gt)` of `clean` as plain tensors.
pub fn guidance_targets<T: Real>(model: &CodecModel<T>, clean: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut g = Graph::new();
    let b = model.bind(&mut g, false)?;
    let x = g.constant(clean.clone())?;
    let f = model.analyze(&mut g, &b, x, Branch::Guidance)?;
    Ok((g.value(f.z0).clone(), g.value(f.z1).clone()))
}

/// [`objective`] with the guidance targets supplied by the caller as
/// `(lambda_g, (z0gt, z1gt))`. Detached targets make the two functions
/// agree in value and gradient; this form is what a finite-difference
/// check can perturb, since the targets stay fixed.
#[allow(clippy::too_many_arguments)]
pub fn objective_with_targets<T: Real>(
    g: &mut Graph<T>,
    b: &Bound,
    model: &CodecModel<T>,
    source: Var,
    clean: Var,
    stage: Stage,
    guidance: Option<(f64, (Var, Var))>,
    rng: &mut ChaCha20Rng,
) -> Result<ObjectiveVars> {
    let branch = match stage {
        Stage::Pretrain => Branch::Guidance,
        Stage::Finetune => Branch::Denoising,
    };
    let feat = model.analyze(g, b, source, branch)?;
    let weighted = match (stage, guidance) {
        (Stage::Finetune, Some((lg, (z0_gt, z1_gt)))) => Some((lg, guidance_loss(g, feat.z0, z0_gt, feat.z1, z1_gt)?)),
        _ => None,
    };
    let z1_hat = quantize_noise(g, feat.z1, rng)?;
    let hyper = model.hyper_path(g, b, feat.z1, z1_hat, rng)?;
    let lik_z1 = model.latent_likelihood(g, z1_hat, hyper.mu, hyper.sigma)?;
    let lik_z2 = model.prior_likelihood(g, b, hyper.z2_hat)?;
    let x_hat = model.synthesize(g, b, z1_hat)?;
    let rd = rd_loss(g, clean, x_hat, lik_z1, lik_z2, model.lambda(), model.metric)?;
    let total = match weighted {
        Some((lg, gv)) => {
            let w = g.scale(gv, T::from_f64(lg))?;
            g.add(rd.total, w)?
        }
        None => rd.total,
    };
    Ok(ObjectiveVars { total, rd, guidance: weighted.map(|(_, v)| v), x_hat })
}

impl ObjectiveVars {
    pub fn report<T: Real>(&self, g: &Graph<T>) -> LossReport {
        let v = |x: Var| g.value(x).item().as_f64();
        LossReport {
            bpp_z1: v(self.rd.bpp_z1),
            bpp_z2: v(self.rd.bpp_z2),
            d: v(self.rd.d),
            g: self.guidance.map(v).unwrap_or(0.0),
            total: v(self.total),
        }
    }
}
