//! Learned, channel-wise factorised density for the hyper-latent.
//!
//! Each channel's cumulative distribution is `sigmoid(f(x))` where `f` is a
//! chain of four elementwise-monotone stages
//! `h <- softplus(M_k) h + b_k`, followed (except for the last stage) by
//! `h <- h + tanh(a_k) * tanh(h)`. Stage widths are 1 -> 3 -> 3 -> 3 -> 1.
//! Positive matrices and `|tanh(a_k)| < 1` keep `f` increasing, so the CDF
//! is monotone by construction.

use crate::tensor::{sigmoid, softplus, CustomOp, Graph, Real, Result, Shape, Tensor, TensorError, Var};

use super::gaussian::TAIL_BINS;
use super::rans::FrequencyTable;

/// Hidden widths between the scalar input and the scalar output.
pub const PRIOR_FILTERS: [usize; 3] = [3, 3, 3];

/// Smallest likelihood admitted into a log-rate.
pub const LIKELIHOOD_BOUND: f64 = 1e-9;

/// `(out, in)` widths of every stage.
pub fn stage_dims() -> Vec<(usize, usize)> {
    let mut widths = vec![1];
    widths.extend(PRIOR_FILTERS);
    widths.push(1);
    widths.windows(2).map(|w| (w[1], w[0])).collect()
}

/// Initial raw parameters for `channels` channels: matrices, biases and
/// factors per stage, laid out as (C, out, in, 1), (C, out, 1, 1) and
/// (C, out, 1, 1). `uniform` supplies bias draws in `[-0.5, 0.5)`.
pub fn init_params<T: Real>(
    channels: usize,
    mut uniform: impl FnMut() -> f64,
) -> (Vec<Tensor<T>>, Vec<Tensor<T>>, Vec<Tensor<T>>) {
    let dims = stage_dims();
    let init_scale: f64 = 10.0;
    let scale = init_scale.powf(1.0 / dims.len() as f64);
    let mut matrices = Vec::new();
    let mut biases = Vec::new();
    let mut factors = Vec::new();
    for (k, &(out, inp)) in dims.iter().enumerate() {
        let init = (1.0 / scale / out as f64).exp_m1().ln();
        matrices.push(Tensor::full(Shape::new(channels, out, inp, 1), T::from_f64(init)));
        biases.push(Tensor::from_fn(Shape::new(channels, out, 1, 1), |_| T::from_f64(uniform())));
        if k + 1 < dims.len() {
            factors.push(Tensor::zeros(Shape::new(channels, out, 1, 1)));
        }
    }
    (matrices, biases, factors)
}

/// Parameters of one channel with the positivity maps already applied.
struct ChannelPrior<T> {
    stages: Vec<Stage<T>>,
}

struct Stage<T> {
    out: usize,
    inp: usize,
    /// sigmoid(raw) = d softplus(raw) / d raw.
    m_slope: Vec<T>,
    m: Vec<T>,
    b: Vec<T>,
    /// tanh(a) and its raw derivative `1 - tanh(a)^2`, absent on the last stage.
    f: Option<(Vec<T>, Vec<T>)>,
}

/// Per-element activations kept for the backward pass.
struct Trace<T> {
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
}

impl<T: Real> ChannelPrior<T> {
    fn new(c: usize, matrices: &[&Tensor<T>], biases: &[&Tensor<T>], factors: &[&Tensor<T>]) -> Self {
        let dims = stage_dims();
        let stages = dims
            .iter()
            .enumerate()
            .map(|(k, &(out, inp))| {
                let raw = &matrices[k].data()[c * out * inp..(c + 1) * out * inp];
                let f = factors.get(k).map(|t| {
                    let th: Vec<T> = t.data()[c * out..(c + 1) * out].iter().map(|v| v.tanh()).collect();
                    let d = th.iter().map(|&t| T::one() - t * t).collect();
                    (th, d)
                });
                Stage {
                    out,
                    inp,
                    m_slope: raw.iter().map(|&v| sigmoid(v)).collect(),
                    m: raw.iter().map(|&v| softplus(v)).collect(),
                    b: biases[k].data()[c * out..(c + 1) * out].to_vec(),
                    f,
                }
            })
            .collect();
        ChannelPrior { stages }
    }

    fn logit(&self, x: T) -> T {
        let mut h = vec![x];
        for s in &self.stages {
            h = s.apply(&h);
        }
        h[0]
    }

    fn logit_traced(&self, x: T) -> (T, Trace<T>) {
        let mut tr = Trace { inputs: Vec::with_capacity(self.stages.len()), pre: Vec::with_capacity(self.stages.len()) };
        let mut h = vec![x];
        for s in &self.stages {
            let a = s.affine(&h);
            tr.inputs.push(h);
            h = s.squash(&a);
            tr.pre.push(a);
        }
        (h[0], tr)
    }

    /// Back-propagates `dout` through a traced evaluation, accumulating
    /// raw-parameter gradients, and returns d/dx.
    fn backprop(&self, tr: &Trace<T>, dout: T, grads: &mut ChannelGrads<T>) -> T {
        let mut delta = vec![dout];
        for (k, s) in self.stages.iter().enumerate().rev() {
            let a = &tr.pre[k];
            if let Some((th, dth)) = &s.f {
                for i in 0..s.out {
                    let ta = a[i].tanh();
                    grads.factors[k][i] = grads.factors[k][i] + delta[i] * ta * dth[i];
                    delta[i] = delta[i] * (T::one() + th[i] * (T::one() - ta * ta));
                }
            }
            let h = &tr.inputs[k];
            let mut prev = vec![T::zero(); s.inp];
            for i in 0..s.out {
                grads.biases[k][i] = grads.biases[k][i] + delta[i];
                for j in 0..s.inp {
                    let idx = i * s.inp + j;
                    grads.matrices[k][idx] = grads.matrices[k][idx] + delta[i] * h[j] * s.m_slope[idx];
                    prev[j] = prev[j] + s.m[idx] * delta[i];
                }
            }
            delta = prev;
        }
        delta[0]
    }
}

impl<T: Real> Stage<T> {
    fn affine(&self, h: &[T]) -> Vec<T> {
        (0..self.out)
            .map(|i| {
                let row = &self.m[i * self.inp..(i + 1) * self.inp];
                row.iter().zip(h).fold(self.b[i], |acc, (&m, &x)| acc + m * x)
            })
            .collect()
    }

    fn squash(&self, a: &[T]) -> Vec<T> {
        match &self.f {
            Some((th, _)) => a.iter().zip(th).map(|(&v, &t)| v + t * v.tanh()).collect(),
            None => a.to_vec(),
        }
    }

    fn apply(&self, h: &[T]) -> Vec<T> {
        self.squash(&self.affine(h))
    }
}

struct ChannelGrads<T> {
    matrices: Vec<Vec<T>>,
    biases: Vec<Vec<T>>,
    factors: Vec<Vec<T>>,
}

impl<T: Real> ChannelGrads<T> {
    fn zeros() -> Self {
        let dims = stage_dims();
        let last = dims.len() - 1;
        ChannelGrads {
            matrices: dims.iter().map(|&(o, i)| vec![T::zero(); o * i]).collect(),
            biases: dims.iter().map(|&(o, _)| vec![T::zero(); o]).collect(),
            factors: dims[..last].iter().map(|&(o, _)| vec![T::zero(); o]).collect(),
        }
    }
}

/// Probability of the unit bin centred at `x`: `cdf(x + 0.5) - cdf(x - 0.5)`,
/// evaluated on the side of the distribution where it does not cancel.
fn bin_probability<T: Real>(lower: T, upper: T) -> T {
    if lower + upper > T::zero() {
        sigmoid(-lower) - sigmoid(-upper)
    } else {
        sigmoid(upper) - sigmoid(lower)
    }
}

fn views<'a, T: Real>(inputs: &[&'a Tensor<T>]) -> (Vec<&'a Tensor<T>>, Vec<&'a Tensor<T>>, Vec<&'a Tensor<T>>) {
    let k = stage_dims().len();
    let matrices = inputs[1..1 + k].to_vec();
    let biases = inputs[1 + k..1 + 2 * k].to_vec();
    let factors = inputs[1 + 2 * k..].to_vec();
    (matrices, biases, factors)
}

fn check_param_shapes<T: Real>(channels: usize, matrices: &[&Tensor<T>], biases: &[&Tensor<T>], factors: &[&Tensor<T>]) -> Result<()> {
    let dims = stage_dims();
    let bad = |what: &str, k: usize, s: Shape| TensorError::Shape {
        op: "factorized_likelihood",
        detail: format!("{what} {k} has shape {s} for {channels} channels"),
    };
    if matrices.len() != dims.len() || biases.len() != dims.len() || factors.len() + 1 != dims.len() {
        return Err(TensorError::Invalid { op: "factorized_likelihood", detail: "wrong parameter count".into() });
    }
    for (k, &(out, inp)) in dims.iter().enumerate() {
        if matrices[k].shape() != Shape::new(channels, out, inp, 1) {
            return Err(bad("matrix", k, matrices[k].shape()));
        }
        if biases[k].shape() != Shape::new(channels, out, 1, 1) {
            return Err(bad("bias", k, biases[k].shape()));
        }
        if let Some(f) = factors.get(k) {
            if f.shape() != Shape::new(channels, out, 1, 1) {
                return Err(bad("factor", k, f.shape()));
            }
        }
    }
    Ok(())
}

struct FactorizedLikelihood;

impl<T: Real> CustomOp<T> for FactorizedLikelihood {
    fn name(&self) -> &'static str {
        "factorized_likelihood"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad_out: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let z = inputs[0];
        let [n, c, h, w] = z.shape().0;
        let plane = h * w;
        let (matrices, biases, factors) = views(inputs);
        let half = T::from_f64(0.5);
        let mut dz = vec![T::zero(); z.shape().numel()];
        let mut all = Vec::with_capacity(c);
        for ch in 0..c {
            let prior = ChannelPrior::new(ch, &matrices, &biases, &factors);
            let mut grads = ChannelGrads::zeros();
            for b in 0..n {
                let base = (b * c + ch) * plane;
                for i in base..base + plane {
                    let x = z.data()[i];
                    let (lower, tl) = prior.logit_traced(x - half);
                    let (upper, tu) = prior.logit_traced(x + half);
                    let su = sigmoid(upper);
                    let sl = sigmoid(lower);
                    let g = grad_out[i];
                    let du = prior.backprop(&tu, g * su * (T::one() - su), &mut grads);
                    let dl = prior.backprop(&tl, -g * sl * (T::one() - sl), &mut grads);
                    dz[i] = du + dl;
                }
            }
            all.push(grads);
        }
        let dims = stage_dims();
        let gather = |sel: &dyn Fn(&ChannelGrads<T>) -> &Vec<T>| -> Vec<T> {
            all.iter().flat_map(|g| sel(g).iter().copied()).collect()
        };
        let mut out = vec![needs[0].then_some(dz)];
        for k in 0..dims.len() {
            out.push(needs[1 + k].then(|| gather(&|g| &g.matrices[k])));
        }
        for k in 0..dims.len() {
            out.push(needs[1 + dims.len() + k].then(|| gather(&|g| &g.biases[k])));
        }
        for k in 0..dims.len() - 1 {
            out.push(needs[1 + 2 * dims.len() + k].then(|| gather(&|g| &g.factors[k])));
        }
        out
    }
}

/// Likelihood of each element of `z` (N,C,H,W) under its channel's density.
///
/// `params` holds the stage matrices, then biases, then factors, each as
/// laid out by [`init_params`].
pub fn likelihood<T: Real>(g: &mut Graph<T>, z: Var, params: &[Var]) -> Result<Var> {
    let k = stage_dims().len();
    if params.len() != 3 * k - 1 {
        return Err(TensorError::Invalid { op: "factorized_likelihood", detail: "wrong parameter count".into() });
    }
    let zs = g.shape(z);
    let (n, c, plane) = (zs.n(), zs.c(), zs.plane());
    let values: Vec<&Tensor<T>> = params.iter().map(|&v| g.value(v)).collect();
    let (matrices, biases, factors) = (values[..k].to_vec(), values[k..2 * k].to_vec(), values[2 * k..].to_vec());
    check_param_shapes(c, &matrices, &biases, &factors)?;
    let half = T::from_f64(0.5);
    let zd = g.value(z).data();
    let mut out = vec![T::zero(); zs.numel()];
    for ch in 0..c {
        let prior = ChannelPrior::new(ch, &matrices, &biases, &factors);
        for b in 0..n {
            let base = (b * c + ch) * plane;
            for i in base..base + plane {
                let x = zd[i];
                out[i] = bin_probability(prior.logit(x - half), prior.logit(x + half));
            }
        }
    }
    let mut inputs = vec![z];
    inputs.extend_from_slice(params);
    g.custom(Box::new(FactorizedLikelihood), &inputs, Tensor::from_vec(zs, out)?)
}

/// Coding-side view of a trained prior, evaluated in double precision.
#[derive(Debug, Clone)]
pub struct FactorizedPrior {
    channels: usize,
    matrices: Vec<Tensor<f64>>,
    biases: Vec<Tensor<f64>>,
    factors: Vec<Tensor<f64>>,
}

impl FactorizedPrior {
    pub fn from_params<T: Real>(
        matrices: &[&Tensor<T>],
        biases: &[&Tensor<T>],
        factors: &[&Tensor<T>],
    ) -> Result<Self> {
        let channels = matrices.first().map(|m| m.shape().n()).unwrap_or(0);
        check_param_shapes(channels, matrices, biases, factors)?;
        Ok(FactorizedPrior {
            channels,
            matrices: matrices.iter().map(|t| t.cast()).collect(),
            biases: biases.iter().map(|t| t.cast()).collect(),
            factors: factors.iter().map(|t| t.cast()).collect(),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn channel(&self, c: usize) -> ChannelPrior<f64> {
        let m: Vec<&Tensor<f64>> = self.matrices.iter().collect();
        let b: Vec<&Tensor<f64>> = self.biases.iter().collect();
        let f: Vec<&Tensor<f64>> = self.factors.iter().collect();
        ChannelPrior::new(c, &m, &b, &f)
    }

    pub fn cdf(&self, c: usize, x: f64) -> f64 {
        sigmoid(self.channel(c).logit(x))
    }

    /// Folded bin probabilities over `[-TAIL_BINS, TAIL_BINS]`.
    pub fn probabilities(&self, c: usize) -> Vec<f64> {
        let prior = self.channel(c);
        let (lo, hi) = (-TAIL_BINS, TAIL_BINS);
        let mut p: Vec<f64> = (lo..=hi)
            .map(|k| bin_probability(prior.logit(k as f64 - 0.5), prior.logit(k as f64 + 0.5)))
            .collect();
        let n = p.len();
        p[0] = sigmoid(prior.logit(lo as f64 + 0.5));
        p[n - 1] = sigmoid(-prior.logit(hi as f64 - 0.5));
        p
    }

    pub fn tables(&self) -> Vec<FrequencyTable> {
        (0..self.channels)
            .map(|c| {
                FrequencyTable::from_probabilities(-TAIL_BINS, &self.probabilities(c))
                    .expect("prior probabilities are finite and non-negative")
            })
            .collect()
    }
}
