//! Camera noise synthesis in the linear raw domain.
//!
//! A clean sRGB image is linearised with the inverse sRGB transfer curve,
//! each sample is redrawn from a signal-dependent Gaussian
//! `N(y, sigma_s * y + sigma_r^2)`, clamped to `[0, 1]` and re-encoded.
//!
//! Randomness comes from `ChaCha20Rng` seeded with `seed_from_u64`; Gaussian
//! variates use `rand_distr::StandardNormal` (ziggurat). Both are
//! value-stable for the pinned crate versions, so a seed reproduces an
//! image bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Constants of the piecewise sRGB transfer curve.
pub mod gamma {
    pub const A: f64 = 0.055;
    pub const B: f64 = 0.0031308;
    pub const M: f64 = 12.92;
    pub const GAMMA: f64 = 2.4;
}

/// Linear to sRGB. Inputs are clamped to `[0, 1]` first.
pub fn gamma_forward(y: f64) -> f64 {
    let y = y.clamp(0.0, 1.0);
    if y <= gamma::B {
        gamma::M * y
    } else {
        // (1 + a) p - a written as p + a (p - 1) so that 1 maps to 1 exactly.
        let p = y.powf(1.0 / gamma::GAMMA);
        p + gamma::A * (p - 1.0)
    }
}

/// sRGB to linear; exact piecewise inverse of [`gamma_forward`].
pub fn gamma_inverse(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x <= gamma::M * gamma::B {
        x / gamma::M
    } else {
        ((x + gamma::A) / (1.0 + gamma::A)).powf(gamma::GAMMA)
    }
}

pub fn gamma_forward_f32(y: f32) -> f32 {
    let y = y.clamp(0.0, 1.0);
    if y <= gamma::B as f32 {
        gamma::M as f32 * y
    } else {
        let p = y.powf(1.0 / gamma::GAMMA as f32);
        p + gamma::A as f32 * (p - 1.0)
    }
}

pub fn gamma_inverse_f32(x: f32) -> f32 {
    let x = x.clamp(0.0, 1.0);
    if x <= (gamma::M * gamma::B) as f32 {
        x / gamma::M as f32
    } else {
        ((x + gamma::A as f32) / (1.0 + gamma::A as f32)).powf(gamma::GAMMA as f32)
    }
}

/// Readout (`sigma_r`) and shot (`sigma_s`) noise parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub sigma_r: f64,
    pub sigma_s: f64,
}

/// Sensor gain levels used for validation and testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GainPreset {
    Gain1,
    Gain2,
    Gain4,
    Gain8,
}

impl GainPreset {
    pub const ALL: [GainPreset; 4] = [GainPreset::Gain1, GainPreset::Gain2, GainPreset::Gain4, GainPreset::Gain8];

    pub fn from_gain(gain: u32) -> Option<GainPreset> {
        match gain {
            1 => Some(GainPreset::Gain1),
            2 => Some(GainPreset::Gain2),
            4 => Some(GainPreset::Gain4),
            8 => Some(GainPreset::Gain8),
            _ => None,
        }
    }

    pub fn gain(self) -> u32 {
        match self {
            GainPreset::Gain1 => 1,
            GainPreset::Gain2 => 2,
            GainPreset::Gain4 => 4,
            GainPreset::Gain8 => 8,
        }
    }

    /// `(log10 sigma_r, log10 sigma_s)`.
    fn exponents(self) -> (f64, f64) {
        match self {
            GainPreset::Gain1 => (-2.1, -2.6),
            GainPreset::Gain2 => (-1.8, -2.3),
            GainPreset::Gain4 => (-1.4, -1.9),
            GainPreset::Gain8 => (-1.1, -1.5),
        }
    }

    pub fn params(self) -> NoiseParams {
        let (r, s) = self.exponents();
        NoiseParams { sigma_r: 10f64.powf(r), sigma_s: 10f64.powf(s) }
    }

    pub fn name(self) -> &'static str {
        match self {
            GainPreset::Gain1 => "gain1",
            GainPreset::Gain2 => "gain2",
            GainPreset::Gain4 => "gain4",
            GainPreset::Gain8 => "gain8",
        }
    }
}

impl std::str::FromStr for GainPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.trim_start_matches("gain");
        digits
            .parse::<u32>()
            .ok()
            .and_then(GainPreset::from_gain)
            .ok_or_else(|| format!("unknown gain preset `{s}` (expected 1, 2, 4 or 8)"))
    }
}

/// Log10 bounds of the training-time parameter ranges.
pub const SIGMA_R_LOG10_RANGE: (f64, f64) = (-3.0, -1.5);
pub const SIGMA_S_LOG10_RANGE: (f64, f64) = (-4.0, -2.0);

impl NoiseParams {
    pub const ZERO: NoiseParams = NoiseParams { sigma_r: 0.0, sigma_s: 0.0 };

    pub fn new(sigma_r: f64, sigma_s: f64) -> Result<Self, String> {
        if !(sigma_r >= 0.0 && sigma_s >= 0.0 && sigma_r.is_finite() && sigma_s.is_finite()) {
            return Err(format!("noise parameters must be finite and non-negative, got ({sigma_r}, {sigma_s})"));
        }
        Ok(NoiseParams { sigma_r, sigma_s })
    }

    /// Variance of the linear-domain measurement at true intensity `y`.
    pub fn variance(&self, y: f64) -> f64 {
        self.sigma_s * y + self.sigma_r * self.sigma_r
    }

    /// Log-uniform draw from the training ranges.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> NoiseParams {
        let er = rng.random_range(SIGMA_R_LOG10_RANGE.0..=SIGMA_R_LOG10_RANGE.1);
        let es = rng.random_range(SIGMA_S_LOG10_RANGE.0..=SIGMA_S_LOG10_RANGE.1);
        NoiseParams { sigma_r: 10f64.powf(er), sigma_s: 10f64.powf(es) }
    }
}

/// Draws `y_noisy ~ N(y, sigma_s * y + sigma_r^2)` without clamping.
pub fn sample_linear<R: Rng + ?Sized>(y: f64, params: &NoiseParams, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    y + params.variance(y).sqrt() * z
}

/// Adds signal-dependent noise to sRGB values in `[0, 1]`.
///
/// Samples are drawn independently per value in slice order. Zero
/// parameters return the input unchanged.
pub fn synthesize_noise(clean: &[f32], params: &NoiseParams, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    synthesize_noise_with(clean, params, &mut rng)
}

pub fn synthesize_noise_with<R: Rng + ?Sized>(clean: &[f32], params: &NoiseParams, rng: &mut R) -> Vec<f32> {
    if params.sigma_r == 0.0 && params.sigma_s == 0.0 {
        return clean.to_vec();
    }
    clean
        .iter()
        .map(|&x| {
            let y = gamma_inverse(x as f64);
            let noisy = sample_linear(y, params, rng).clamp(0.0, 1.0);
            gamma_forward(noisy) as f32
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_fixed_points() {
        assert_eq!(gamma_forward(0.0), 0.0);
        assert_eq!(gamma_forward(1.0), 1.0);
        assert_eq!(gamma_inverse(1.0), 1.0);
        assert!((gamma_forward(gamma::B) - 0.040450).abs() < 1e-6);
        assert!((gamma_inverse(0.02) - 0.0015480).abs() < 1e-7);
    }

    #[test]
    fn gamma_continuity_at_knee() {
        let lin = gamma::M * gamma::B;
        let pow = (1.0 + gamma::A) * gamma::B.powf(1.0 / gamma::GAMMA) - gamma::A;
        assert!((lin - pow).abs() < 1e-4);
    }

    #[test]
    fn presets_are_exact_powers() {
        let p = GainPreset::Gain8.params();
        assert_eq!(p.sigma_r, 10f64.powf(-1.1));
        assert_eq!(p.sigma_s, 10f64.powf(-1.5));
        // 10^-1.5 * 0.5 + 10^-2.2 = 0.0221210 (the commonly quoted 0.022124 is rounded loosely).
        assert!((p.variance(0.5) - 0.0221210).abs() < 1e-7);
        assert!((p.variance(0.5) - 0.022124).abs() < 5e-6);
        assert_eq!("gain4".parse::<GainPreset>().unwrap(), GainPreset::Gain4);
        assert_eq!("2".parse::<GainPreset>().unwrap(), GainPreset::Gain2);
        assert!("3".parse::<GainPreset>().is_err());
    }

    #[test]
    fn zero_params_are_identity() {
        let clean: Vec<f32> = (0..100).map(|i| i as f32 / 99.0).collect();
        assert_eq!(synthesize_noise(&clean, &NoiseParams::ZERO, 7), clean);
    }

    #[test]
    fn seeded_output_is_reproducible() {
        let clean = vec![0.3f32; 256];
        let p = GainPreset::Gain4.params();
        assert_eq!(synthesize_noise(&clean, &p, 11), synthesize_noise(&clean, &p, 11));
        assert_ne!(synthesize_noise(&clean, &p, 11), synthesize_noise(&clean, &p, 12));
    }

    #[test]
    fn negative_params_rejected() {
        assert!(NoiseParams::new(-0.1, 0.0).is_err());
        assert!(NoiseParams::new(0.1, f64::NAN).is_err());
    }
}
