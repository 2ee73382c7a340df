//! The `noisecodec` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or model error.
//! `NOISECODEC_THREADS` caps the worker threads.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::eval::{self, ImageBuffer};
use crate::net::{CodecModel, Metric, Quality};
use crate::noise::{synthesize_noise, GainPreset, NoiseParams};
use crate::train::{trainer, Dataset, TrainConfig, Trainer};

pub const THREADS_ENV: &str = "NOISECODEC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "noisecodec", version, about = "Compress noisy images into denoised bitstreams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Add synthetic sensor noise to an image.
    SynthNoise {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Gain preset: 1, 2, 4 or 8.
        #[arg(long, conflicts_with_all = ["sigma_r", "sigma_s"], required_unless_present_all = ["sigma_r", "sigma_s"])]
        gain: Option<GainPreset>,
        /// Read-noise standard deviation (linear domain).
        #[arg(long, requires = "sigma_s")]
        sigma_r: Option<f64>,
        /// Shot-noise scale (linear domain).
        #[arg(long, requires = "sigma_r")]
        sigma_s: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rate-distortion pretraining on clean images.
    Pretrain(TrainArgs),
    /// Fine-tuning of a pretrained model on synthesised noisy/clean pairs.
    Finetune {
        #[command(flatten)]
        train: TrainArgs,
        /// Pretrained checkpoint (`final.jdcm` of a pretrain run).
        #[arg(long)]
        pretrained: PathBuf,
    },
    /// Compress an image into a `.jdc` file.
    Compress {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Decode a `.jdc` file into a PNG or PPM image.
    Decompress {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Rate-distortion sweep over images, checkpoints and noise presets.
    Eval {
        /// Directory of clean PNG/PPM images.
        #[arg(long)]
        data: PathBuf,
        /// One checkpoint per quality level.
        #[arg(long, num_args = 1.., required = true)]
        models: Vec<PathBuf>,
        /// Gain presets to evaluate.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        presets: Vec<GainPreset>,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON summary, including wall times.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// JSON training configuration; defaults to the desk settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of clean PNG/PPM training images.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the CSV log.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    quality: Option<Quality>,
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    seed: Option<u64>,
    /// Shorten the schedule proportionally to this many epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Continue from `<out>/last.jdcm`.
    #[arg(long)]
    resume: bool,
}

/// Failure classes with their exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match configure_threads().and_then(|()| execute(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    // A second initialisation in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn load_model(path: &Path) -> Result<CodecModel<f32>, CliError> {
    CodecModel::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::SynthNoise { input, out, gain, sigma_r, sigma_s, seed } => {
            let params = match (gain, sigma_r, sigma_s) {
                (Some(g), _, _) => g.params(),
                (None, Some(r), Some(s)) => NoiseParams::new(r, s).map_err(CliError::Usage)?,
                _ => return Err(CliError::Usage("give --gain or both --sigma-r and --sigma-s".into())),
            };
            let clean = ImageBuffer::load(&input).map_err(data)?;
            let noisy = synthesize_noise(clean.data(), &params, seed);
            let img = ImageBuffer::new(clean.width(), clean.height(), noisy).map_err(data)?;
            img.save(&out).map_err(data)
        }
        Command::Pretrain(args) => train(args, None),
        Command::Finetune { train: args, pretrained } => train(args, Some(&pretrained)),
        Command::Compress { input, out, model } => {
            let model = load_model(&model)?;
            let c = eval::compress_file(&model, &input, &out).map_err(data)?;
            println!("{} bytes, {:.4} bpp", c.bytes.len(), c.bpp());
            Ok(())
        }
        Command::Decompress { input, out, model } => {
            let model = load_model(&model)?;
            eval::decompress_file(&model, &input, &out).map_err(data)?;
            Ok(())
        }
        Command::Eval { data: dir, models, presets, out, json, seed } => {
            let images = eval::load_images(&dir).map_err(data)?;
            if images.is_empty() {
                return Err(CliError::Data(format!("no .png or .ppm images in {}", dir.display())));
            }
            let models = models.iter().map(|p| load_model(p)).collect::<Result<Vec<_>, _>>()?;
            let table = eval::evaluate_rd(&images, &models, &presets, seed).map_err(data)?;
            write(&out, table.to_csv().as_bytes())?;
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&table.to_json()).expect("json value serialises");
                write(&path, text.as_bytes())?;
            }
            if table.all_failed() {
                return Err(CliError::Data("every record failed; see the error column".into()));
            }
            Ok(())
        }
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<TrainConfig>(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => {
            let quality = args.quality.ok_or_else(|| CliError::Usage("give --quality or --config".into()))?;
            TrainConfig::desk(quality, args.metric.unwrap_or(Metric::Mse)).map_err(CliError::Usage)?
        }
    };
    if args.quality.is_some() || args.metric.is_some() {
        config.quality = args.quality.unwrap_or(config.quality);
        config.metric = args.metric.unwrap_or(config.metric);
        config.lambda_d = config
            .quality
            .lambda(config.metric)
            .ok_or_else(|| CliError::Usage(format!("no {} operating point for {}", config.metric, config.quality)))?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        config = config.scaled_to(epochs);
    }
    config.validate().map_err(CliError::Usage)?;
    Ok(config)
}

fn train(args: TrainArgs, pretrained: Option<&Path>) -> Result<(), CliError> {
    let config = train_config(&args)?;
    let data_set = Dataset::load_dir(&args.data).map_err(data)?;
    let last = args.out.join(trainer::LAST_FILE);
    let mut t = if args.resume && last.exists() {
        let t = Trainer::resume(&last).map_err(data)?;
        if t.config != config {
            return Err(CliError::Usage(format!("{} was written with a different configuration", last.display())));
        }
        t
    } else {
        match pretrained {
            None => Trainer::pretrain(config).map_err(data)?,
            Some(path) => Trainer::finetune(config, load_model(path)?).map_err(data)?,
        }
    };
    t.train(&data_set, Some(&args.out), |r| eprintln!("{}", r.csv_row())).map_err(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["noisecodec"]), 1);
        assert_eq!(run(["noisecodec", "frobnicate"]), 1);
        assert_eq!(run(["noisecodec", "synth-noise", "--in", "a.png", "--out", "b.png"]), 1);
        assert_eq!(run(["noisecodec", "synth-noise", "--in", "a.png", "--out", "b.png", "--gain", "3"]), 1);
        assert_eq!(run(["noisecodec", "--help"]), 0);
    }

    #[test]
    fn data_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.png");
        let out = dir.path().join("out.png");
        let args = ["noisecodec", "synth-noise", "--in", missing.to_str().unwrap(), "--out", out.to_str().unwrap(), "--gain", "4"];
        assert_eq!(run(args), 2);
    }
}
