//! Likelihood models, the rANS coder and the `.jdc` container.

pub mod bitstream;
pub mod factorized;
pub mod gaussian;
pub mod rans;

use crate::tensor::{CustomOp, Graph, Real, Result as TensorResult, Tensor, TensorError, Var};

pub use bitstream::Bitstream;
pub use factorized::FactorizedPrior;
pub use gaussian::{gaussian_pmf, normal_cdf, DiscretizedGaussian, SIGMA_FLOOR, TAIL_BINS};
pub use rans::{FrequencyTable, RansDecoder, RansEncoder, PROB_BITS, PROB_SCALE};

#[derive(Debug, thiserror::Error)]
pub enum EntropyError {
    #[error("invalid probability model: {0}")]
    Model(String),
    #[error("symbol {symbol} outside model support [{lo}, {hi}]")]
    SymbolOutOfRange { symbol: i32, lo: i32, hi: i32 },
    #[error("scale {scale} below floor {floor}")]
    ScaleBelowFloor { scale: f64, floor: f64 },
    #[error("stream truncated")]
    Truncated,
    #[error("corrupt stream: {0}")]
    Corrupt(String),
    #[error("not a bitstream (bad magic)")]
    BadMagic,
    #[error("unsupported bitstream version {0}")]
    UnsupportedVersion(u16),
    #[error("payload checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("stream/model mismatch: {0}")]
    Mismatch(String),
}

struct GaussianLikelihood;

/// `(d L/d|v|, d L/d sigma)` for the bin mass `L` of offset `|v|` from the mean.
fn bin_mass_partials(a: f64, sigma: f64) -> (f64, f64) {
    let u1 = (0.5 - a) / sigma;
    let u2 = (-0.5 - a) / sigma;
    let (p1, p2) = (gaussian::normal_pdf(u1), gaussian::normal_pdf(u2));
    ((p2 - p1) / sigma, -(p1 * u1 - p2 * u2) / sigma)
}

impl<T: Real> CustomOp<T> for GaussianLikelihood {
    fn name(&self) -> &'static str {
        "gaussian_likelihood"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad_out: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (x, mu, sigma) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let n = x.len();
        let mut dx = vec![T::zero(); n];
        let mut ds = vec![T::zero(); n];
        for i in 0..n {
            let v = (x[i] - mu[i]).as_f64();
            let (da, dsig) = bin_mass_partials(v.abs(), sigma[i].as_f64());
            let g = grad_out[i].as_f64();
            dx[i] = T::from_f64(g * da * v.signum());
            ds[i] = T::from_f64(g * dsig);
        }
        let dmu = needs[1].then(|| dx.iter().map(|&v| -v).collect());
        vec![needs[0].then_some(dx), dmu, needs[2].then_some(ds)]
    }
}

/// Mass of the unit bin around each `x` under `N(mu, sigma^2)`; all three
/// inputs share one shape. Evaluated in double precision.
pub fn gaussian_likelihood<T: Real>(g: &mut Graph<T>, x: Var, mu: Var, sigma: Var) -> TensorResult<Var> {
    let shape = g.shape(x);
    if g.shape(mu) != shape || g.shape(sigma) != shape {
        return Err(TensorError::Shape {
            op: "gaussian_likelihood",
            detail: format!("x {shape}, mu {}, sigma {}", g.shape(mu), g.shape(sigma)),
        });
    }
    let (xd, md, sd) = (g.value(x).data(), g.value(mu).data(), g.value(sigma).data());
    let out: Vec<T> = (0..shape.numel())
        .map(|i| {
            let a = (xd[i] - md[i]).as_f64().abs();
            let s = sd[i].as_f64();
            T::from_f64(normal_cdf((0.5 - a) / s) - normal_cdf((-0.5 - a) / s))
        })
        .collect();
    g.custom(Box::new(GaussianLikelihood), &[x, mu, sigma], Tensor::from_vec(shape, out)?)
}
