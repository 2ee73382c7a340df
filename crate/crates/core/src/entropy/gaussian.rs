//! Discretised mean-scale Gaussian over integer symbols.

use super::rans::FrequencyTable;
use super::EntropyError;

/// Lower bound on predicted scales.
pub const SIGMA_FLOOR: f64 = 0.11;

/// Half-width of the coded window, in quantisation bins around the mean.
pub const TAIL_BINS: i32 = 32;

/// Standard normal CDF via `libm::erfc` (FreeBSD msun port, double
/// precision; absolute error far below 1e-7 on the whole line).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Probability mass of integer `k` under `N(mean, scale^2)` integrated over
/// `[k - 0.5, k + 0.5]`, without tail folding.
pub fn gaussian_pmf(k: i32, mean: f64, scale: f64) -> Result<f64, EntropyError> {
    check_scale(scale)?;
    Ok(bin_mass(k as f64 - mean, scale))
}

fn check_scale(scale: f64) -> Result<(), EntropyError> {
    // Predicted scales are f32 values compared against the same floor.
    if !(scale.is_finite() && scale >= SIGMA_FLOOR as f32 as f64) {
        return Err(EntropyError::ScaleBelowFloor { scale, floor: SIGMA_FLOOR });
    }
    Ok(())
}

/// Mass of `[v - 0.5, v + 0.5]` for a zero-mean Gaussian. Evaluated in the
/// lower tail so small masses keep their relative precision.
fn bin_mass(v: f64, scale: f64) -> f64 {
    let v = v.abs();
    normal_cdf((0.5 - v) / scale) - normal_cdf((-0.5 - v) / scale)
}

/// A Gaussian restricted to `round(mean) +- half_width` with the mass
/// outside folded into the two edge symbols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscretizedGaussian {
    mean: f64,
    scale: f64,
    half_width: i32,
}

impl DiscretizedGaussian {
    pub fn new(mean: f64, scale: f64) -> Result<Self, EntropyError> {
        Self::with_half_width(mean, scale, TAIL_BINS)
    }

    pub fn with_half_width(mean: f64, scale: f64, half_width: i32) -> Result<Self, EntropyError> {
        check_scale(scale)?;
        if !mean.is_finite() || half_width < 0 {
            return Err(EntropyError::Model(format!("invalid Gaussian mean {mean} / half-width {half_width}")));
        }
        Ok(DiscretizedGaussian { mean, scale, half_width })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Inclusive symbol range.
    pub fn support(&self) -> (i32, i32) {
        let c = self.mean.round() as i32;
        (c - self.half_width, c + self.half_width)
    }

    /// Folded probabilities over [`support`](Self::support).
    pub fn probabilities(&self) -> Vec<f64> {
        let (lo, hi) = self.support();
        let n = (hi - lo + 1) as usize;
        if n == 1 {
            return vec![1.0];
        }
        let mut p: Vec<f64> = (lo..=hi).map(|k| bin_mass(k as f64 - self.mean, self.scale)).collect();
        p[0] = normal_cdf((lo as f64 + 0.5 - self.mean) / self.scale);
        p[n - 1] = normal_cdf((self.mean - hi as f64 + 0.5) / self.scale);
        p
    }

    pub fn table(&self) -> FrequencyTable {
        FrequencyTable::from_probabilities(self.support().0, &self.probabilities())
            .expect("folded Gaussian probabilities are valid")
    }

    pub fn clamp_symbol(&self, symbol: i32) -> i32 {
        let (lo, hi) = self.support();
        symbol.clamp(lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::rans::PROB_SCALE;

    #[test]
    fn unit_gaussian_centre_mass() {
        let p = gaussian_pmf(0, 0.0, 1.0).unwrap();
        assert!((p - 0.382925).abs() < 1e-6, "{p}");
    }

    #[test]
    fn symmetric_in_mean() {
        for k in -5..=5 {
            let a = gaussian_pmf(k, 0.3, 1.7).unwrap();
            let b = gaussian_pmf(-k, -0.3, 1.7).unwrap();
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn folded_probabilities_sum_to_one() {
        let g = DiscretizedGaussian::new(2.4, 5.0).unwrap();
        let s: f64 = g.probabilities().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        let t = g.table();
        let total: u32 = (t.lo()..=t.hi()).map(|k| t.frequency(k).unwrap()).sum();
        assert_eq!(total, PROB_SCALE);
        assert_eq!(g.support(), (2 - TAIL_BINS, 2 + TAIL_BINS));
    }

    #[test]
    fn scale_below_floor_rejected() {
        assert!(gaussian_pmf(0, 0.0, 0.05).is_err());
        assert!(DiscretizedGaussian::new(0.0, 0.1).is_err());
        assert!(DiscretizedGaussian::new(0.0, SIGMA_FLOOR).is_ok());
    }

    #[test]
    fn width_one_support_is_certain() {
        let g = DiscretizedGaussian::with_half_width(0.2, 1.0, 0).unwrap();
        assert_eq!(g.table().bits(0).unwrap(), 0.0);
    }
}
