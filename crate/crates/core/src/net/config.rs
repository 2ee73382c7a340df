use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Operating point on the rate-distortion ladder, `q1` (lowest rate) to `q6`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quality(u8);

const MSE_LAMBDAS: [f64; 6] = [0.0018, 0.0035, 0.0067, 0.0130, 0.0250, 0.0483];
/// MS-SSIM models exist only for q2, q3, q5 and q6.
const MSSSIM_LAMBDAS: [Option<f64>; 6] = [None, Some(4.58), Some(8.73), None, Some(31.73), Some(60.50)];

impl Quality {
    pub const ALL: [Quality; 6] = [Quality(1), Quality(2), Quality(3), Quality(4), Quality(5), Quality(6)];

    pub fn new(level: u8) -> Option<Quality> {
        (1..=6).contains(&level).then_some(Quality(level))
    }

    pub fn level(self) -> u8 {
        self.0
    }

    /// Distortion weight of this quality under `metric`, if such a model exists.
    pub fn lambda(self, metric: Metric) -> Option<f64> {
        let i = self.0 as usize - 1;
        match metric {
            Metric::Mse => Some(MSE_LAMBDAS[i]),
            Metric::MsSsim => MSSSIM_LAMBDAS[i],
        }
    }

    /// Channel width of the full-size model: 128 up to q3, 192 above.
    pub fn paper_width(self) -> usize {
        if self.0 <= 3 {
            128
        } else {
            192
        }
    }
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}", self.0)
    }
}

impl FromStr for Quality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix(['q', 'Q']).unwrap_or(s);
        digits
            .parse::<u8>()
            .ok()
            .and_then(Quality::new)
            .ok_or_else(|| format!("invalid quality {s:?} (expected q1..q6)"))
    }
}

impl Serialize for Quality {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Quality {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mse,
    #[serde(rename = "msssim")]
    MsSsim,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Mse => "mse",
            Metric::MsSsim => "msssim",
        })
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(Metric::Mse),
            "msssim" | "ms-ssim" | "ms_ssim" => Ok(Metric::MsSsim),
            _ => Err(format!("invalid metric {s:?} (expected mse or msssim)")),
        }
    }
}

/// Downsampling of the analysis transform (z1 is at H/16).
pub const ANALYSIS_FACTOR: usize = 16;
/// Downsampling including the hyper transform (z2 is at H/64); inputs to
/// the codec are padded to this multiple.
pub const PAD_MULTIPLE: usize = 64;

/// Network widths and switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Feature width `N` of the transforms.
    pub n: usize,
    /// Channels of the latent z1.
    pub m: usize,
    /// Channels of the hyper-latent z2.
    pub hyper: usize,
    /// Spatial extent of the masked context kernel (odd).
    pub context_kernel: usize,
    pub context: bool,
}

impl ArchConfig {
    /// Full-size widths for a quality level.
    pub fn paper(quality: Quality) -> ArchConfig {
        let n = quality.paper_width();
        ArchConfig { n, m: n, hyper: n, context_kernel: 5, context: true }
    }

    /// Small widths for CPU training runs and tests.
    pub fn desk() -> ArchConfig {
        ArchConfig { n: 16, m: 16, hyper: 8, context_kernel: 5, context: true }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n == 0 || self.m == 0 || self.hyper == 0 {
            return Err("channel widths must be positive".into());
        }
        if self.context_kernel.is_multiple_of(2) || self.context_kernel < 3 {
            return Err(format!("context kernel {} must be odd and at least 3", self.context_kernel));
        }
        Ok(())
    }

    /// Width of the hidden layer of the entropy-parameter head.
    pub fn head_hidden(&self) -> usize {
        3 * self.m
    }
}
