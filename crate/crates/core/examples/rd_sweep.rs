//! Rate-distortion sweep: every checkpoint against every gain preset on a
//! few synthetic images, printed as CSV.
//!
//! cargo run --release --example rd_sweep -- [checkpoint.jdcm ...]
//!
//! Without checkpoints, untrained q1 and q6 desk models are used.

use std::path::Path;

use noisecodec::eval::{evaluate_rd, NamedImage};
use noisecodec::net::{ArchConfig, CodecModel, Metric, Quality};
use noisecodec::noise::GainPreset;
use noisecodec::train::Dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let paths: Vec<String> = std::env::args().skip(1).collect();
    let models = if paths.is_empty() {
        ["q1", "q6"]
            .iter()
            .map(|q| CodecModel::new(ArchConfig::desk(), q.parse::<Quality>()?, Metric::Mse, 0))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        paths.iter().map(|p| CodecModel::<f32>::load(Path::new(p))).collect::<Result<Vec<_>, _>>()?
    };
    let images: Vec<NamedImage> =
        Dataset::synthetic(2, 96, 11).images().iter().enumerate().map(|(i, img)| (format!("tex{i}"), Ok(img.clone()))).collect();
    let table = evaluate_rd(&images, &models, &GainPreset::ALL, 0)?;
    print!("{}", table.to_csv());
    Ok(())
}
