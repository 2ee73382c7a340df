//! Shared finite-difference machinery for the gradient tests.
//!
//! An [`OpCase`] is one differentiable op with random extents, parameters
//! and inputs. Its scalar loss is `sum(w * op(inputs))` with fixed random
//! weights `w`. The analytic gradient (in `f32` or `f64`) is compared with a
//! central difference evaluated in `f64` on the same input values; inputs
//! are generated away from kinks so the difference is meaningful.

#![allow(dead_code)]

use noisecodec::entropy::{factorized, gaussian_likelihood};
use noisecodec::eval::metrics::ms_ssim_graph;
use noisecodec::net::Metric;
use noisecodec::tensor::kernels::ConvGeom;
use noisecodec::tensor::{Graph, Real, Result, Shape, Tensor, Var};
use noisecodec::train::{distortion, guidance_loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Kinds in the catalogue; `OpCase::random(k % KINDS, ..)` covers them all.
pub const KINDS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Add { scalar_rhs: bool },
    Sub { scalar_rhs: bool },
    Mul { scalar_rhs: bool },
    Div { scalar_rhs: bool },
    Affine { scale: f64, shift: f64 },
    LeakyRelu { slope: f64 },
    Sigmoid,
    Abs,
    Softplus,
    Ln,
    Powf { p: f64 },
    Clamp { lo: f64, hi: f64 },
    LowerBound { bound: f64 },
    Sum,
    Mean,
    MeanPlanes,
    Conv { geom: ConvGeom, bias: bool },
    ConvTranspose { geom: ConvGeom, bias: bool },
    MaskedConv { bias: bool },
    Concat,
    Narrow { start: usize, len: usize },
    Crop { h: usize, w: usize },
    Reshape,
    AvgPool2,
    GaussianLikelihood,
    FactorizedLikelihood,
    MsSsim { scales: usize },
    Guidance,
    MseDistortion,
    Chain,
}

#[derive(Debug, Clone)]
pub struct OpCase {
    pub op: Op,
    pub inputs: Vec<Tensor<f64>>,
    pub weights: Vec<f64>,
}

fn uniform(rng: &mut ChaCha20Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values at least `margin` away from every point in `kinks`, within `[lo, hi)`.
fn away_from(rng: &mut ChaCha20Rng, shape: Shape, lo: f64, hi: f64, kinks: &[f64], margin: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| loop {
        let v = rng.random_range(lo..hi);
        if kinks.iter().all(|k| (v - k).abs() > margin) {
            break v;
        }
    })
}

fn small_shape(rng: &mut ChaCha20Rng) -> Shape {
    Shape::new(rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=5), rng.random_range(1..=5))
}

impl OpCase {
    /// A random instance of catalogue entry `kind`.
    pub fn random(kind: usize, seed: u64) -> OpCase {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let r = &mut rng;
        let s = small_shape(r);
        let bin = |r: &mut ChaCha20Rng, scalar_rhs: bool, lo: f64, hi: f64| {
            let b = if scalar_rhs { Shape::SCALAR } else { s };
            vec![uniform(r, s, -2.0, 2.0), uniform(r, b, lo, hi)]
        };
        let (op, inputs) = match kind {
            0 => {
                let sc = r.random_bool(0.3);
                (Op::Add { scalar_rhs: sc }, bin(r, sc, -2.0, 2.0))
            }
            1 => {
                let sc = r.random_bool(0.3);
                (Op::Sub { scalar_rhs: sc }, bin(r, sc, -2.0, 2.0))
            }
            2 => {
                let sc = r.random_bool(0.3);
                (Op::Mul { scalar_rhs: sc }, bin(r, sc, -2.0, 2.0))
            }
            3 => {
                let sc = r.random_bool(0.3);
                let mut v = bin(r, sc, 0.5, 2.0);
                let sign = if r.random_bool(0.5) { -1.0 } else { 1.0 };
                v[1].data_mut().iter_mut().for_each(|x| *x *= sign);
                (Op::Div { scalar_rhs: sc }, v)
            }
            4 => (Op::Affine { scale: r.random_range(-2.0..2.0), shift: r.random_range(-1.0..1.0) }, vec![uniform(r, s, -2.0, 2.0)]),
            5 => (Op::LeakyRelu { slope: r.random_range(0.01..0.3) }, vec![away_from(r, s, -2.0, 2.0, &[0.0], 0.05)]),
            6 => (Op::Sigmoid, vec![uniform(r, s, -4.0, 4.0)]),
            7 => (Op::Abs, vec![away_from(r, s, -2.0, 2.0, &[0.0], 0.05)]),
            8 => (Op::Softplus, vec![uniform(r, s, -4.0, 4.0)]),
            9 => (Op::Ln, vec![uniform(r, s, 0.2, 3.0)]),
            10 => (Op::Powf { p: r.random_range(-1.5..2.5) }, vec![uniform(r, s, 0.3, 2.0)]),
            11 => {
                let lo = r.random_range(-1.0..0.0);
                let hi = lo + r.random_range(0.5..1.5);
                (Op::Clamp { lo, hi }, vec![away_from(r, s, -2.0, 2.0, &[lo, hi], 0.05)])
            }
            12 => {
                let bound = r.random_range(-0.5..0.5);
                (Op::LowerBound { bound }, vec![away_from(r, s, -2.0, 2.0, &[bound], 0.05)])
            }
            13 => (Op::Sum, vec![uniform(r, s, -2.0, 2.0)]),
            14 => (Op::Mean, vec![uniform(r, s, -2.0, 2.0)]),
            15 => (Op::MeanPlanes, vec![uniform(r, s, -2.0, 2.0)]),
            16 => {
                let k = r.random_range(1..=3);
                let geom = ConvGeom::new(r.random_range(1..=2), r.random_range(0..=k / 2 + 1).min(k - 1));
                let (cin, cout) = (r.random_range(1..=3), r.random_range(1..=3));
                let size = r.random_range(k.max(3)..=6);
                let bias = r.random_bool(0.6);
                let xs = Shape::new(r.random_range(1..=2), cin, size, size + 1);
                let mut v = vec![
                    uniform(r, xs, -1.0, 1.0),
                    uniform(r, Shape::new(cout, cin, k, k), -1.0, 1.0),
                ];
                if bias {
                    v.push(uniform(r, Shape::new(1, cout, 1, 1), -1.0, 1.0));
                }
                (Op::Conv { geom, bias }, v)
            }
            17 => {
                let k = r.random_range(2..=4);
                let geom = ConvGeom::new(r.random_range(1..=2), r.random_range(0..k / 2 + 1).min(k - 1));
                let (cin, cout) = (r.random_range(1..=3), r.random_range(1..=3));
                let bias = r.random_bool(0.6);
                let xs = Shape::new(r.random_range(1..=2), cin, r.random_range(2..=4), r.random_range(2..=4));
                let mut v = vec![
                    uniform(r, xs, -1.0, 1.0),
                    uniform(r, Shape::new(cin, cout, k, k), -1.0, 1.0),
                ];
                if bias {
                    v.push(uniform(r, Shape::new(1, cout, 1, 1), -1.0, 1.0));
                }
                (Op::ConvTranspose { geom, bias }, v)
            }
            18 => {
                let k = [3, 5][r.random_range(0..2)];
                let (cin, cout) = (r.random_range(1..=3), r.random_range(1..=3));
                let bias = r.random_bool(0.6);
                let xs = Shape::new(1, cin, r.random_range(2..=5), r.random_range(2..=5));
                let mut v = vec![
                    uniform(r, xs, -1.0, 1.0),
                    uniform(r, Shape::new(cout, cin, k, k), -1.0, 1.0),
                ];
                if bias {
                    v.push(uniform(r, Shape::new(1, cout, 1, 1), -1.0, 1.0));
                }
                (Op::MaskedConv { bias }, v)
            }
            19 => {
                let parts = r.random_range(2..=3);
                let v = (0..parts)
                    .map(|_| {
                        let ps = Shape::new(s.n(), r.random_range(1..=3), s.h(), s.w());
                        uniform(r, ps, -2.0, 2.0)
                    })
                    .collect();
                (Op::Concat, v)
            }
            20 => {
                let c = r.random_range(2..=5);
                let start = r.random_range(0..c);
                let len = r.random_range(1..=c - start);
                (Op::Narrow { start, len }, vec![uniform(r, Shape::new(s.n(), c, s.h(), s.w()), -2.0, 2.0)])
            }
            21 => {
                let (h, w) = (r.random_range(1..=s.h()), r.random_range(1..=s.w()));
                (Op::Crop { h, w }, vec![uniform(r, s, -2.0, 2.0)])
            }
            22 => (Op::Reshape, vec![uniform(r, s, -2.0, 2.0)]),
            23 => {
                let sh = Shape::new(s.n(), s.c(), r.random_range(2..=7), r.random_range(2..=7));
                (Op::AvgPool2, vec![uniform(r, sh, -2.0, 2.0)])
            }
            24 => {
                let mu = uniform(r, s, -2.0, 2.0);
                // Keep |x - mu| away from zero, where the likelihood has a kink.
                let x = Tensor::from_fn(s, |i| {
                    let d = loop {
                        let d: f64 = r.random_range(-2.5..2.5);
                        if d.abs() > 0.05 {
                            break d;
                        }
                    };
                    mu.data()[i] + d
                });
                (Op::GaussianLikelihood, vec![x, mu, uniform(r, s, 0.2, 2.0)])
            }
            25 => {
                let c = r.random_range(1..=3);
                let (mut m, mut b, mut f) = factorized::init_params::<f64>(c, || 0.0);
                for t in m.iter_mut().chain(b.iter_mut()).chain(f.iter_mut()) {
                    t.data_mut().iter_mut().for_each(|v| *v += r.random_range(-0.5..0.5));
                }
                let z = uniform(r, Shape::new(s.n(), c, s.h(), s.w()), -3.0, 3.0);
                let mut v = vec![z];
                v.extend(m);
                v.extend(b);
                v.extend(f);
                (Op::FactorizedLikelihood, v)
            }
            26 => {
                let scales = r.random_range(1..=2);
                let side = 11 << (scales - 1);
                let sh = Shape::new(1, r.random_range(1..=2), side + r.random_range(0..3), side + r.random_range(0..3));
                let x = uniform(r, sh, 0.1, 0.9);
                let y = Tensor::from_fn(sh, |i| x.data()[i] + r.random_range(-0.2..0.2));
                (Op::MsSsim { scales }, vec![x, y])
            }
            27 => {
                let s1 = Shape::new(s.n(), s.c() + 1, s.h().div_ceil(2), s.w().div_ceil(2));
                let a = away_from(r, s, -2.0, 2.0, &[], 0.0);
                let b = away_from(r, s1, -2.0, 2.0, &[], 0.0);
                // Offsets from the targets stay clear of zero, where |.| kinks.
                let off = |r: &mut ChaCha20Rng, t: &Tensor<f64>| {
                    Tensor::from_fn(t.shape(), |i| {
                        let d = loop {
                            let d: f64 = r.random_range(-1.0..1.0);
                            if d.abs() > 0.05 {
                                break d;
                            }
                        };
                        t.data()[i] + d
                    })
                };
                let (at, bt) = (off(r, &a), off(r, &b));
                (Op::Guidance, vec![a, at, b, bt])
            }
            28 => {
                let sh = Shape::new(s.n(), 3, s.h(), s.w());
                (Op::MseDistortion, vec![uniform(r, sh, 0.0, 1.0), uniform(r, sh, 0.0, 1.0)])
            }
            29 => {
                // conv -> leaky relu -> sigmoid gate -> mean planes, all inputs shared.
                let x = uniform(r, Shape::new(1, 2, 5, 4), -1.0, 1.0);
                let k = uniform(r, Shape::new(3, 2, 3, 3), -0.5, 0.5);
                (Op::Chain, vec![x, k])
            }
            _ => panic!("op kind {kind} out of range"),
        };
        let mut case = OpCase { op, inputs, weights: Vec::new() };
        let n = case.output_len();
        case.weights = match op {
            // The bound passes upward gradients below the floor; positive
            // weights keep the check on the true derivative.
            Op::LowerBound { .. } => (0..n).map(|_| rng.random_range(0.2..1.0)).collect(),
            _ => (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        case
    }

    fn output_len(&self) -> usize {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = self.inputs.iter().map(|t| g.constant(t.clone()).unwrap()).collect();
        let y = apply(self.op, &mut g, &vars).unwrap();
        g.shape(y).numel()
    }

    /// Inputs rounded through `T`, so both precisions see identical values.
    fn inputs_as<T: Real>(&self) -> Vec<Tensor<f64>> {
        self.inputs.iter().map(|t| t.cast::<T>().cast::<f64>()).collect()
    }

    pub fn loss<T: Real>(&self, inputs: &[Tensor<f64>], grads: bool) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::<T>::new();
        let vars: Vec<Var> =
            inputs.iter().map(|t| g.leaf(t.cast::<T>().with_requires_grad(grads))).collect::<Result<_>>()?;
        let y = apply(self.op, &mut g, &vars)?;
        let w = g.constant(Tensor::from_vec(g.shape(y), self.weights.iter().map(|&v| T::from_f64(v)).collect())?)?;
        let prod = g.mul(y, w)?;
        let loss = g.sum(prod)?;
        let value = g.value(loss).item().as_f64();
        if !grads {
            return Ok((value, Vec::new()));
        }
        g.backward(loss)?;
        let gs = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| {
                g.grad(v).map(|d| d.iter().map(|x| x.as_f64()).collect()).unwrap_or_else(|| vec![0.0; t.shape().numel()])
            })
            .collect();
        Ok((value, gs))
    }

    /// Worst `|analytic - numeric| / max(1, |analytic|, |numeric|)` over up
    /// to `per_input` coordinates of each input.
    pub fn check<T: Real>(&self, per_input: usize) -> Result<f64> {
        let inputs = self.inputs_as::<T>();
        let (_, grads) = self.loss::<T>(&inputs, true)?;
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let mut rng = ChaCha20Rng::seed_from_u64(0x9e37);
        for (k, t) in inputs.iter().enumerate() {
            let n = t.shape().numel();
            let coords: Vec<usize> =
                if n <= per_input { (0..n).collect() } else { (0..per_input).map(|_| rng.random_range(0..n)).collect() };
            for j in coords {
                let mut probe = inputs.clone();
                let orig = probe[k].data()[j];
                probe[k].data_mut()[j] = orig + h;
                let (up, _) = self.loss::<f64>(&probe, false)?;
                probe[k].data_mut()[j] = orig - h;
                let (down, _) = self.loss::<f64>(&probe, false)?;
                let (a, b) = (grads[k][j], (up - down) / (2.0 * h));
                worst = worst.max((a - b).abs() / 1f64.max(a.abs()).max(b.abs()));
            }
        }
        Ok(worst)
    }
}

/// Evaluates `op` on `x` inside `g`.
pub fn apply<T: Real>(op: Op, g: &mut Graph<T>, x: &[Var]) -> Result<Var> {
    let t = T::from_f64;
    match op {
        Op::Add { .. } => g.add(x[0], x[1]),
        Op::Sub { .. } => g.sub(x[0], x[1]),
        Op::Mul { .. } => g.mul(x[0], x[1]),
        Op::Div { .. } => g.div(x[0], x[1]),
        Op::Affine { scale, shift } => g.affine(x[0], t(scale), t(shift)),
        Op::LeakyRelu { slope } => g.leaky_relu(x[0], t(slope)),
        Op::Sigmoid => g.sigmoid(x[0]),
        Op::Abs => g.abs(x[0]),
        Op::Softplus => g.softplus(x[0]),
        Op::Ln => g.ln(x[0]),
        Op::Powf { p } => g.powf(x[0], t(p)),
        Op::Clamp { lo, hi } => g.clamp(x[0], t(lo), t(hi)),
        Op::LowerBound { bound } => g.lower_bound(x[0], t(bound)),
        Op::Sum => g.sum(x[0]),
        Op::Mean => g.mean(x[0]),
        Op::MeanPlanes => g.mean_planes(x[0]),
        Op::Conv { geom, bias } => g.conv2d(x[0], x[1], bias.then(|| x[2]), geom),
        Op::ConvTranspose { geom, bias } => g.conv2d_transpose(x[0], x[1], bias.then(|| x[2]), geom),
        Op::MaskedConv { bias } => g.masked_conv2d(x[0], x[1], bias.then(|| x[2])),
        Op::Concat => g.concat(x),
        Op::Narrow { start, len } => g.narrow(x[0], start, len),
        Op::Crop { h, w } => g.crop(x[0], h, w),
        Op::Reshape => {
            let s = g.shape(x[0]);
            g.reshape(x[0], Shape::new(1, 1, s.numel(), 1))
        }
        Op::AvgPool2 => g.avg_pool2(x[0]),
        Op::GaussianLikelihood => gaussian_likelihood(g, x[0], x[1], x[2]),
        Op::FactorizedLikelihood => factorized::likelihood(g, x[0], &x[1..]),
        Op::MsSsim { scales } => Ok(ms_ssim_graph(g, x[0], x[1], Some(scales))?.0),
        Op::Guidance => guidance_loss(g, x[0], x[1], x[2], x[3]),
        Op::MseDistortion => distortion(g, x[0], x[1], Metric::Mse),
        Op::Chain => {
            let h = g.conv2d(x[0], x[1], None, ConvGeom::new(1, 1))?;
            let a = g.leaky_relu(h, t(0.01))?;
            let s = g.sigmoid(h)?;
            let m = g.mul(a, s)?;
            g.mean_planes(m)
        }
    }
}

/// The fine-tuning objective on a small model and a 1x3x16x16 input, with
/// fixed guidance targets, as a finite-difference problem over every
/// parameter tensor and the noisy input.
pub struct ObjectiveCase {
    pub model: noisecodec::net::CodecModel<f64>,
    pub noisy: Tensor<f64>,
    pub clean: Tensor<f64>,
    pub targets: (Tensor<f64>, Tensor<f64>),
    pub stage: noisecodec::train::Stage,
    pub lambda_g: f64,
}

impl ObjectiveCase {
    pub fn random(seed: u64, metric: Metric) -> ObjectiveCase {
        use noisecodec::net::{ArchConfig, CodecModel, Quality};
        let arch = ArchConfig { n: 4, m: 4, hyper: 2, ..ArchConfig::desk() };
        let quality: Quality = if metric == Metric::Mse { "q5" } else { "q3" }.parse().unwrap();
        let mut model = CodecModel::<f64>::new(arch, quality, metric, seed).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
        // Non-zero denoiser outputs so every path carries gradient.
        for id in model.denoiser_output_params() {
            for v in model.params.get_mut(id).data_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
        let shape = Shape::new(1, 3, 16, 16);
        let clean = uniform(&mut rng, shape, 0.2, 0.8);
        let noisy = Tensor::from_fn(shape, |i| clean.data()[i] + rng.random_range(-0.05..0.05));
        let targets = noisecodec::train::guidance_targets(&model, &clean).unwrap();
        ObjectiveCase { model, noisy, clean, targets, stage: noisecodec::train::Stage::Finetune, lambda_g: 3.0 }
    }

    /// Total loss in precision `T` at `model`/`noisy`; gradients with
    /// respect to every parameter and then the noisy input.
    pub fn loss<T: Real>(
        &self,
        model: &noisecodec::net::CodecModel<f64>,
        noisy: &Tensor<f64>,
        grads: bool,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        use noisecodec::train::objective_with_targets;
        let model = model.cast::<T>();
        let mut g = Graph::<T>::new();
        let b = model.bind(&mut g, grads)?;
        let x = g.leaf(noisy.cast::<T>().with_requires_grad(grads))?;
        let y = g.constant(self.clean.cast())?;
        let t0 = g.constant(self.targets.0.cast())?;
        let t1 = g.constant(self.targets.1.cast())?;
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let obj = objective_with_targets(&mut g, &b, &model, x, y, self.stage, Some((self.lambda_g, (t0, t1))), &mut rng)?;
        let value = g.value(obj.total).item().as_f64();
        if !grads {
            return Ok((value, Vec::new()));
        }
        g.backward(obj.total)?;
        let mut vars: Vec<(Var, usize)> =
            b.vars().iter().zip(model.params.tensors()).map(|(&v, t)| (v, t.shape().numel())).collect();
        vars.push((x, noisy.shape().numel()));
        let gs = vars
            .into_iter()
            .map(|(v, n)| g.grad(v).map(|d| d.iter().map(|x| x.as_f64()).collect()).unwrap_or_else(|| vec![0.0; n]))
            .collect();
        Ok((value, gs))
    }

    /// Worst relative error over `per_tensor` random coordinates of every
    /// parameter tensor and of the input. Returns `(worst, coordinates)`.
    pub fn check<T: Real>(&self, per_tensor: usize, seed: u64) -> Result<(f64, usize)> {
        let model = self.model.cast::<T>().cast::<f64>();
        let noisy = self.noisy.cast::<T>().cast::<f64>();
        let (_, grads) = self.loss::<T>(&model, &noisy, true)?;
        let h = 1e-6;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        let mut count = 0;
        let tensors = model.params.len();
        for (k, grad) in grads.iter().enumerate() {
            for _ in 0..per_tensor {
                let j = rng.random_range(0..grad.len());
                let (mut m, mut x) = (model.clone(), noisy.clone());
                let slot = |m: &mut noisecodec::net::CodecModel<f64>, x: &mut Tensor<f64>, v: f64| {
                    if k < tensors {
                        m.params.tensors_mut()[k].data_mut()[j] = v;
                    } else {
                        x.data_mut()[j] = v;
                    }
                };
                let orig = if k < tensors { model.params.tensors()[k].data()[j] } else { noisy.data()[j] };
                slot(&mut m, &mut x, orig + h);
                let (up, _) = self.loss::<f64>(&m, &x, false)?;
                slot(&mut m, &mut x, orig - h);
                let (down, _) = self.loss::<f64>(&m, &x, false)?;
                let (a, b) = (grad[j], (up - down) / (2.0 * h));
                worst = worst.max((a - b).abs() / 1f64.max(a.abs()).max(b.abs()));
                count += 1;
            }
        }
        Ok((worst, count))
    }
}

/// Draws a symbol from folded probabilities starting at `lo`.
fn draw(rng: &mut ChaCha20Rng, lo: i32, probs: &[f64]) -> i32 {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (k, &p) in probs.iter().enumerate() {
        if u < p {
            return lo + k as i32;
        }
        u -= p;
    }
    lo + probs.len() as i32 - 1
}

/// `n` symbols, each under its own random mean-scale Gaussian.
pub fn gaussian_block(seed: u64, n: usize) -> (Vec<i32>, Vec<noisecodec::entropy::FrequencyTable>) {
    use noisecodec::entropy::{DiscretizedGaussian, SIGMA_FLOOR};
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut symbols = Vec::with_capacity(n);
    let mut tables = Vec::with_capacity(n);
    for _ in 0..n {
        let mean = rng.random_range(-20.0..20.0);
        let scale = SIGMA_FLOOR * 10f64.powf(rng.random_range(0.0..2.5));
        let model = DiscretizedGaussian::new(mean, scale).unwrap();
        let (lo, _) = model.support();
        symbols.push(draw(&mut rng, lo, &model.probabilities()));
        tables.push(model.table());
    }
    (symbols, tables)
}

/// `n` symbols under a random factorized prior with `channels` channels,
/// assigned to channels in raster order like a latent tensor.
pub fn factorized_block(seed: u64, n: usize, channels: usize) -> (Vec<i32>, Vec<noisecodec::entropy::FrequencyTable>) {
    use noisecodec::entropy::{FactorizedPrior, TAIL_BINS};
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (mut m, mut b, mut f) = factorized::init_params::<f64>(channels, || 0.0);
    for t in m.iter_mut().chain(b.iter_mut()).chain(f.iter_mut()) {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-1.0..1.0));
    }
    let (mr, br, fr): (Vec<_>, Vec<_>, Vec<_>) = (m.iter().collect(), b.iter().collect(), f.iter().collect());
    let prior = FactorizedPrior::from_params(&mr, &br, &fr).unwrap();
    let per_channel = prior.tables();
    let probs: Vec<Vec<f64>> = (0..channels).map(|c| prior.probabilities(c)).collect();
    let plane = n.div_ceil(channels);
    let mut symbols = Vec::with_capacity(n);
    let mut tables = Vec::with_capacity(n);
    for i in 0..n {
        let c = (i / plane).min(channels - 1);
        symbols.push(draw(&mut rng, -TAIL_BINS, &probs[c]));
        tables.push(per_channel[c].clone());
    }
    (symbols, tables)
}
