//! Pretrains a desk-sized codec on synthetic textures, then fine-tunes it
//! for noisy inputs, printing the per-epoch log.
//!
//! cargo run --release --example train_desk -- [epochs] [patches]

use std::time::Instant;

use noisecodec::net::{Metric, Quality};
use noisecodec::train::{evaluate, validation_batches, Dataset, Stage, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    let patches: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(64);

    let config = TrainConfig::desk("q3".parse::<Quality>()?, Metric::Mse)?.scaled_to(epochs);
    let (train, val) = Dataset::synthetic(patches + 16, config.patch_size, 1).split(16);

    let t0 = Instant::now();
    let mut pre = Trainer::pretrain(config.clone())?;
    println!("pretrain: {} params, {} steps/epoch", pre.model.params.numel(), pre.steps_per_epoch(&train));
    println!("{}", noisecodec::train::trainer::CSV_HEADER);
    pre.train(&train, None, |r| println!("{}", r.csv_row()))?;
    println!("pretrain took {:.1}s", t0.elapsed().as_secs_f64());

    let t1 = Instant::now();
    let mut fine = Trainer::finetune(config.clone(), pre.model.clone())?;
    fine.train(&train, None, |r| println!("{}", r.csv_row()))?;
    println!("finetune took {:.1}s", t1.elapsed().as_secs_f64());

    let noisy = validation_batches(&val, config.patch_size, config.batch_size, true, 99);
    let before = evaluate(&pre.model, Stage::Finetune, Some(config.lambda_g), &noisy, 5)?;
    let after = evaluate(&fine.model, Stage::Finetune, Some(config.lambda_g), &noisy, 5)?;
    println!("noisy validation L (without G): pretrained {:.4}, fine-tuned {:.4}", before.rd(config.lambda_d), after.rd(config.lambda_d));
    Ok(())
}
