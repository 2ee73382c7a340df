use serde::{Deserialize, Serialize};

use crate::net::{ArchConfig, Metric, Quality};

/// Training hyperparameters. Serialised field for field as the JSON config
/// accepted by the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub quality: Quality,
    pub metric: Metric,
    /// Distortion weight; must equal the ladder value of `quality`/`metric`.
    pub lambda_d: f64,
    /// Guidance weight (fine-tuning only).
    pub lambda_g: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Base learning rate.
    pub lr: f64,
    /// Learning rate at the first warmup epoch.
    pub warmup_start_lr: f64,
    pub warmup_epochs: usize,
    /// Epochs at which the learning rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    /// A step is skipped when its loss exceeds `cap_factor` times the median
    /// of the last `cap_window` applied losses.
    pub cap_factor: f64,
    pub cap_window: usize,
    pub patch_size: usize,
    pub seed: u64,
    pub arch: ArchConfig,
}

impl TrainConfig {
    /// Full-scale settings: batch 16, 256 px patches, 600 epochs at 1e-4
    /// decayed at 450 and 550, 20 warmup epochs.
    pub fn paper(quality: Quality, metric: Metric) -> Result<Self, String> {
        Ok(TrainConfig {
            quality,
            metric,
            lambda_d: lambda_for(quality, metric)?,
            lambda_g: 3.0,
            batch_size: 16,
            epochs: 600,
            lr: 1e-4,
            warmup_start_lr: 1e-6,
            warmup_epochs: 20,
            decay_epochs: vec![450, 550],
            decay_factor: 0.1,
            cap_factor: 5.0,
            cap_window: 100,
            patch_size: 256,
            seed: 0,
            arch: ArchConfig::paper(quality),
        })
    }

    /// CPU-sized settings: the paper's schedule scaled to 60 epochs (decay at
    /// 45 and 55, 2 warmup epochs), batch 8, 64 px patches, desk widths.
    pub fn desk(quality: Quality, metric: Metric) -> Result<Self, String> {
        Ok(TrainConfig {
            batch_size: 8,
            epochs: 60,
            lr: 1e-3,
            warmup_epochs: 2,
            decay_epochs: vec![45, 55],
            patch_size: 64,
            arch: ArchConfig::desk(),
            ..Self::paper(quality, metric)?
        })
    }

    /// Shortens the schedule to `epochs`, keeping decay points and warmup at
    /// the same fractions of the run.
    pub fn scaled_to(mut self, epochs: usize) -> Self {
        let old = self.epochs.max(1) as f64;
        let scale = |e: usize| ((e as f64 / old) * epochs as f64).round() as usize;
        self.decay_epochs = self.decay_epochs.iter().map(|&e| scale(e)).collect();
        self.warmup_epochs = if self.warmup_epochs == 0 { 0 } else { scale(self.warmup_epochs).max(1) };
        self.epochs = epochs;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        let expected = lambda_for(self.quality, self.metric)?;
        if self.lambda_d != expected {
            return Err(format!(
                "lambda_d {} does not match {} {} (expected {expected})",
                self.lambda_d, self.metric, self.quality
            ));
        }
        if !(self.lambda_g >= 0.0) {
            return Err("lambda_g must be non-negative".into());
        }
        if self.batch_size == 0 || self.epochs == 0 || self.patch_size == 0 {
            return Err("batch_size, epochs and patch_size must be positive".into());
        }
        if !self.patch_size.is_multiple_of(crate::net::ANALYSIS_FACTOR) {
            return Err(format!("patch_size {} must be a multiple of {}", self.patch_size, crate::net::ANALYSIS_FACTOR));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(format!("warmup_epochs {} must be below epochs {}", self.warmup_epochs, self.epochs));
        }
        if !(self.lr > 0.0 && self.warmup_start_lr > 0.0 && self.decay_factor > 0.0) {
            return Err("learning rates and decay factor must be positive".into());
        }
        if !(self.cap_factor > 0.0) || self.cap_window == 0 {
            return Err("cap_factor and cap_window must be positive".into());
        }
        self.arch.validate()
    }

    /// Learning rate of epoch `e` (0-based). During fine-tuning the first
    /// `warmup_epochs` ramp linearly from `warmup_start_lr` towards `lr`,
    /// constant within an epoch.
    pub fn lr_at(&self, epoch: usize, warmup: bool) -> f64 {
        if warmup && epoch < self.warmup_epochs {
            return self.warmup_start_lr + (self.lr - self.warmup_start_lr) * epoch as f64 / self.warmup_epochs as f64;
        }
        let decays = self.decay_epochs.iter().filter(|&&d| epoch >= d).count();
        self.lr * self.decay_factor.powi(decays as i32)
    }
}

fn lambda_for(quality: Quality, metric: Metric) -> Result<f64, String> {
    quality.lambda(metric).ok_or_else(|| format!("no {metric} operating point for {quality}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_schedule() {
        let c = TrainConfig::desk(Quality::new(1).unwrap(), Metric::Mse).unwrap();
        c.validate().unwrap();
        assert_eq!(c.lr_at(0, true), 1e-6);
        assert_eq!(c.lr_at(1, true), 1e-6 + (1e-3 - 1e-6) * 0.5);
        assert_eq!(c.lr_at(2, true), 1e-3);
        assert_eq!(c.lr_at(0, false), 1e-3);
        assert!((c.lr_at(45, true) - 1e-4).abs() < 1e-18);
        assert!((c.lr_at(59, true) - 1e-5).abs() < 1e-18);
        let s = c.clone().scaled_to(30);
        assert_eq!((s.decay_epochs.clone(), s.warmup_epochs), (vec![23, 28], 1));
    }

    #[test]
    fn lambda_mismatch_rejected() {
        let mut c = TrainConfig::desk(Quality::new(6).unwrap(), Metric::Mse).unwrap();
        assert_eq!(c.lambda_d, 0.0483);
        c.lambda_d = 0.01;
        assert!(c.validate().is_err());
        assert!(TrainConfig::desk(Quality::new(1).unwrap(), Metric::MsSsim).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = TrainConfig::paper(Quality::new(5).unwrap(), Metric::MsSsim).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), c);
    }
}
