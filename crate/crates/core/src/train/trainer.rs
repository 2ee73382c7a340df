//! The optimisation loop shared by pretraining and fine-tuning.

use std::collections::VecDeque;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{Batch, DataError, Dataset};
use super::loss::{objective, LossReport, Stage};
use crate::net::{Checkpoint, CheckpointError, CodecModel};
use crate::noise::NoiseParams;
use crate::tensor::{adam_step, AdamConfig, AdamState, Graph, Tensor, TensorError};

pub const CSV_HEADER: &str = "epoch,lr,bpp_z1,bpp_z2,D,G,L,skipped_steps";
pub const LOG_FILE: &str = "train_log.csv";
pub const LAST_FILE: &str = "last.jdcm";
pub const FINAL_FILE: &str = "final.jdcm";

/// Stream offset separating the shuffle generator from per-step ones.
const SHUFFLE_STREAM: u64 = 1 << 63;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, step {step}: {report:?}")]
    NonFinite { epoch: usize, step: usize, report: LossReport },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type TrainResult<T> = std::result::Result<T, TrainError>;

/// One row of the training log: means over the epoch's applied steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub bpp_z1: f64,
    pub bpp_z2: f64,
    pub d: f64,
    pub g: f64,
    pub l: f64,
    pub skipped_steps: usize,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch, self.lr, self.bpp_z1, self.bpp_z2, self.d, self.g, self.l, self.skipped_steps
        )
    }
}

/// Skips steps whose loss exceeds `factor` times the median of the last
/// `window` applied losses. Inactive until `window` losses are recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCap {
    pub factor: f64,
    pub window: usize,
    pub history: VecDeque<f64>,
}

impl LossCap {
    pub fn new(factor: f64, window: usize) -> Self {
        LossCap { factor, window, history: VecDeque::with_capacity(window) }
    }

    pub fn threshold(&self) -> f64 {
        if self.history.len() < self.window {
            return f64::INFINITY;
        }
        let mut v: Vec<f64> = self.history.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        self.factor * median
    }

    pub fn exceeds(&self, loss: f64) -> bool {
        loss > self.threshold()
    }

    pub fn record(&mut self, loss: f64) {
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(loss);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Applied(LossReport),
    Skipped { report: LossReport, cap: f64 },
}

/// Resumable trainer state stored in `last.jdcm` next to the parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainState {
    config: TrainConfig,
    stage: Stage,
    epoch: usize,
    adam_t: u64,
    applied_steps: u64,
    skipped_steps: u64,
    cap: LossCap,
    log: Vec<EpochRecord>,
}

/// Adam on every parameter, a per-epoch schedule and the loss cap.
///
/// All randomness of epoch `e`, step `s` comes from a ChaCha20 generator
/// seeded with the config seed on stream `(e << 32) | s`, so resuming from
/// a saved epoch replays later steps exactly.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub stage: Stage,
    pub model: CodecModel<f32>,
    pub adam: AdamState<f32>,
    pub cap: LossCap,
    /// Index of the next epoch to run.
    pub epoch: usize,
    pub applied_steps: u64,
    pub skipped_steps: u64,
    pub log: Vec<EpochRecord>,
}

impl Trainer {
    /// Pretraining from freshly initialised weights.
    pub fn pretrain(config: TrainConfig) -> TrainResult<Self> {
        config.validate().map_err(TrainError::Config)?;
        let model =
            CodecModel::new(config.arch, config.quality, config.metric, config.seed).map_err(TrainError::Config)?;
        Ok(Self::with_model(config, Stage::Pretrain, model))
    }

    /// Fine-tuning from a pretrained model, which must match the config.
    pub fn finetune(config: TrainConfig, pretrained: CodecModel<f32>) -> TrainResult<Self> {
        config.validate().map_err(TrainError::Config)?;
        if (pretrained.arch, pretrained.quality, pretrained.metric) != (config.arch, config.quality, config.metric) {
            return Err(TrainError::Config(format!(
                "pretrained model is {} {} {:?}, config asks for {} {} {:?}",
                pretrained.quality, pretrained.metric, pretrained.arch, config.quality, config.metric, config.arch
            )));
        }
        Ok(Self::with_model(config, Stage::Finetune, pretrained))
    }

    fn with_model(config: TrainConfig, stage: Stage, model: CodecModel<f32>) -> Self {
        let adam = AdamState::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, model.params.tensors());
        let cap = LossCap::new(config.cap_factor, config.cap_window);
        Trainer { config, stage, model, adam, cap, epoch: 0, applied_steps: 0, skipped_steps: 0, log: Vec::new() }
    }

    /// Learning rate of the next epoch; the linear warmup applies to fine-tuning.
    pub fn lr(&self) -> f64 {
        self.config.lr_at(self.epoch, self.stage == Stage::Finetune)
    }

    pub fn lambda_g(&self) -> Option<f64> {
        (self.stage == Stage::Finetune).then_some(self.config.lambda_g)
    }

    pub fn step_rng(&self, epoch: usize, step: usize) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.config.seed);
        rng.set_stream(((epoch as u64) << 32) | step as u64);
        rng
    }

    /// Random patches of `indices`; fine-tuning adds noise with parameters
    /// drawn once for the batch.
    pub fn make_batch(&self, data: &Dataset, indices: &[usize], rng: &mut ChaCha20Rng) -> Batch {
        let patches: Vec<_> = indices.iter().map(|&i| data.random_patch(i, self.config.patch_size, rng)).collect();
        let noise = (self.stage == Stage::Finetune).then(|| NoiseParams::sample(rng));
        Batch::from_patches(&patches, noise.as_ref(), rng)
    }

    /// Forward pass, cap check and, unless skipped, one Adam update at the
    /// current epoch's learning rate. A skipped step touches neither the
    /// parameters nor the optimizer state.
    pub fn step(&mut self, batch: &Batch, rng: &mut ChaCha20Rng) -> TrainResult<StepOutcome> {
        let mut g = Graph::<f32>::new();
        let b = self.model.bind(&mut g, true)?;
        let source = g.constant(batch.source.clone())?;
        let clean = g.constant(batch.clean.clone())?;
        let obj = objective(&mut g, &b, &self.model, source, clean, self.stage, self.lambda_g(), rng)?;
        let report = obj.report(&g);
        if !report.total.is_finite() {
            return Err(TrainError::NonFinite { epoch: self.epoch, step: (self.applied_steps + self.skipped_steps) as usize, report });
        }
        if self.cap.exceeds(report.total) {
            self.skipped_steps += 1;
            return Ok(StepOutcome::Skipped { report, cap: self.cap.threshold() });
        }
        g.backward(obj.total)?;
        let zeros: Vec<Vec<f32>> = self.model.params.tensors().iter().map(|t| vec![0.0; t.shape().numel()]).collect();
        let grads: Vec<&[f32]> = b.vars().iter().zip(&zeros).map(|(&v, z)| g.grad(v).unwrap_or(z)).collect();
        self.adam.config.lr = self.lr();
        let mut params: Vec<&mut Tensor<f32>> = self.model.params.tensors_mut().iter_mut().collect();
        adam_step(&mut params, &grads, &mut self.adam)?;
        self.cap.record(report.total);
        self.applied_steps += 1;
        Ok(StepOutcome::Applied(report))
    }

    /// Number of full batches per epoch.
    pub fn steps_per_epoch(&self, data: &Dataset) -> usize {
        data.len() / self.config.batch_size
    }

    /// One pass over `data` in a seeded shuffled order; the trailing
    /// partial batch is dropped.
    pub fn run_epoch(&mut self, data: &Dataset) -> TrainResult<EpochRecord> {
        data.check_patch_size(self.config.patch_size)?;
        let steps = self.steps_per_epoch(data);
        if steps == 0 {
            return Err(TrainError::Config(format!(
                "{} images cannot fill a batch of {}",
                data.len(),
                self.config.batch_size
            )));
        }
        let mut shuffle = ChaCha20Rng::seed_from_u64(self.config.seed);
        shuffle.set_stream(SHUFFLE_STREAM | self.epoch as u64);
        let order = data.shuffled(&mut shuffle);
        let lr = self.lr();
        let mut sum = LossReport::default();
        let (mut applied, mut skipped) = (0usize, 0usize);
        let bs = self.config.batch_size;
        for step in 0..steps {
            let mut rng = self.step_rng(self.epoch, step);
            let batch = self.make_batch(data, &order[step * bs..(step + 1) * bs], &mut rng);
            match self.step(&batch, &mut rng) {
                Ok(StepOutcome::Applied(r)) => {
                    applied += 1;
                    sum.bpp_z1 += r.bpp_z1;
                    sum.bpp_z2 += r.bpp_z2;
                    sum.d += r.d;
                    sum.g += r.g;
                    sum.total += r.total;
                }
                Ok(StepOutcome::Skipped { .. }) => skipped += 1,
                Err(TrainError::NonFinite { report, .. }) => {
                    return Err(TrainError::NonFinite { epoch: self.epoch, step, report })
                }
                Err(e) => return Err(e),
            }
        }
        let k = applied.max(1) as f64;
        let mean = |v: f64| if applied == 0 { f64::NAN } else { v / k };
        let record = EpochRecord {
            epoch: self.epoch,
            lr,
            bpp_z1: mean(sum.bpp_z1),
            bpp_z2: mean(sum.bpp_z2),
            d: mean(sum.d),
            g: mean(sum.g),
            l: mean(sum.total),
            skipped_steps: skipped,
        };
        self.log.push(record.clone());
        self.epoch += 1;
        Ok(record)
    }

    /// Runs the remaining epochs. With `out`, after every epoch the CSV log
    /// and `last.jdcm` are rewritten, and `final.jdcm` is written at the end.
    pub fn train(
        &mut self,
        data: &Dataset,
        out: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> TrainResult<()> {
        if let Some(dir) = out {
            std::fs::create_dir_all(dir).map_err(|source| TrainError::Io { path: dir.display().to_string(), source })?;
        }
        while self.epoch < self.config.epochs {
            let record = self.run_epoch(data)?;
            on_epoch(&record);
            if let Some(dir) = out {
                self.write_log(&dir.join(LOG_FILE))?;
                self.save_state(&dir.join(LAST_FILE))?;
            }
        }
        if let Some(dir) = out {
            self.model.save(&dir.join(FINAL_FILE), self.stage_name())?;
        }
        Ok(())
    }

    pub fn stage_name(&self) -> &'static str {
        match self.stage {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        }
    }

    /// The log as CSV text with a header line.
    pub fn csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.log {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn write_log(&self, path: &Path) -> TrainResult<()> {
        std::fs::write(path, self.csv()).map_err(|source| TrainError::Io { path: path.display().to_string(), source })
    }

    /// Parameters, Adam moments and loop state in one checkpoint.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut header = serde_json::to_value(self.model.header(self.stage_name())).expect("header serialises");
        let state = TrainState {
            config: self.config.clone(),
            stage: self.stage,
            epoch: self.epoch,
            adam_t: self.adam.t,
            applied_steps: self.applied_steps,
            skipped_steps: self.skipped_steps,
            cap: self.cap.clone(),
            log: self.log.clone(),
        };
        header["train"] = serde_json::to_value(state).expect("state serialises");
        let mut ck = self.model.to_checkpoint(header);
        for (i, (_, name, t)) in self.model.params.iter().enumerate() {
            let s = t.shape();
            ck.push(format!("adam.m.{name}"), &Tensor::from_vec(s, self.adam.m[i].clone()).expect("moment extents"));
            ck.push(format!("adam.v.{name}"), &Tensor::from_vec(s, self.adam.v[i].clone()).expect("moment extents"));
        }
        ck
    }

    pub fn save_state(&self, path: &Path) -> TrainResult<()> {
        Ok(self.to_checkpoint().save(path)?)
    }

    /// Restores a trainer saved by [`Trainer::save_state`].
    pub fn from_checkpoint(ck: &Checkpoint) -> TrainResult<Self> {
        let state: TrainState = ck
            .header
            .get("train")
            .cloned()
            .ok_or_else(|| CheckpointError::Header("no training state (not a last.jdcm checkpoint)".into()))
            .and_then(|v| serde_json::from_value(v).map_err(|e| CheckpointError::Header(e.to_string())))?;
        let model = CodecModel::<f32>::from_checkpoint(ck)?;
        let mut t = Self::with_model(state.config, state.stage, model);
        for (i, (_, name, _)) in t.model.params.iter().enumerate() {
            for (kind, dst) in [("m", &mut t.adam.m[i]), ("v", &mut t.adam.v[i])] {
                let key = format!("adam.{kind}.{name}");
                let src = ck.get(&key).ok_or_else(|| CheckpointError::Mismatch(format!("missing {key}")))?;
                if src.shape().numel() != dst.len() {
                    return Err(CheckpointError::Mismatch(format!("{key} has {} values", src.shape().numel())).into());
                }
                *dst = src.data().iter().map(|&v| v as f32).collect();
            }
        }
        t.adam.t = state.adam_t;
        t.epoch = state.epoch;
        t.applied_steps = state.applied_steps;
        t.skipped_steps = state.skipped_steps;
        t.cap = state.cap;
        t.log = state.log;
        Ok(t)
    }

    pub fn resume(path: &Path) -> TrainResult<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Deterministic validation batches: top-left patches of `data`, in order,
/// `batch_size` at a time. With `noisy`, each batch gets noise parameters
/// and samples from a generator seeded by `seed` on the batch's stream.
pub fn validation_batches(data: &Dataset, patch: usize, batch_size: usize, noisy: bool, seed: u64) -> Vec<Batch> {
    let patches: Vec<_> = (0..data.len()).map(|i| data.fixed_patch(i, patch)).collect();
    patches
        .chunks(batch_size.max(1))
        .enumerate()
        .map(|(k, chunk)| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let noise = noisy.then(|| NoiseParams::sample(&mut rng));
            Batch::from_patches(chunk, noise.as_ref(), &mut rng)
        })
        .collect()
}

/// Mean objective over `batches` (weighted by batch size) without updates.
/// Quantisation noise for batch `k` comes from `seed` on stream `k`, so two
/// models evaluated with the same arguments see identical draws.
pub fn evaluate(
    model: &CodecModel<f32>,
    stage: Stage,
    lambda_g: Option<f64>,
    batches: &[Batch],
    seed: u64,
) -> TrainResult<LossReport> {
    let mut sum = LossReport::default();
    let mut count = 0usize;
    for (k, batch) in batches.iter().enumerate() {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut g = Graph::<f32>::new();
        let b = model.bind(&mut g, false)?;
        let source = g.constant(batch.source.clone())?;
        let clean = g.constant(batch.clean.clone())?;
        let r = objective(&mut g, &b, model, source, clean, stage, lambda_g, &mut rng)?.report(&g);
        let n = batch.len() as f64;
        sum.bpp_z1 += r.bpp_z1 * n;
        sum.bpp_z2 += r.bpp_z2 * n;
        sum.d += r.d * n;
        sum.g += r.g * n;
        sum.total += r.total * n;
        count += batch.len();
    }
    let k = count.max(1) as f64;
    Ok(LossReport { bpp_z1: sum.bpp_z1 / k, bpp_z2: sum.bpp_z2 / k, d: sum.d / k, g: sum.g / k, total: sum.total / k })
}
