//! Rate-distortion sweeps over images, models and noise presets.
//!
//! CSV schema, one header line then rows of ten fields:
//!
//! ```text
//! kind,image,quality,preset,bpp,psnr_db,ms_ssim,ms_ssim_db,ms_ssim_scales,error
//! ```
//!
//! `record` rows come first, sorted by (quality, preset, image); then one
//! `aggregate` row per (quality, preset) with means over the successful
//! records (empty `image` and `ms_ssim_scales`, `n_ok/n_total` in `error`
//! when some records failed). Failed records carry the message in `error`
//! and empty metric fields. Identical images give `psnr_db = inf`. Wall
//! times are kept out of the CSV so reruns are byte-identical; they appear
//! in the JSON summary.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::files::{compress, decompress, EvalError, EvalResult};
use super::image::{is_image_path, ImageBuffer};
use super::metrics::{ms_ssim, ms_ssim_db, psnr};
use crate::net::{CodecModel, Quality};
use crate::noise::{synthesize_noise_with, GainPreset};

pub const CSV_HEADER: [&str; 10] =
    ["kind", "image", "quality", "preset", "bpp", "psnr_db", "ms_ssim", "ms_ssim_db", "ms_ssim_scales", "error"];

/// A named input image, or the reason it could not be read.
pub type NamedImage = (String, Result<ImageBuffer, String>);

/// Every file with a PNG/PPM extension in `dir`, sorted by name. Unreadable
/// files are kept as errors so they surface as error rows.
pub fn load_images(dir: &Path) -> EvalResult<Vec<NamedImage>> {
    let io = |source| EvalError::Io { path: dir.display().to_string(), source };
    let mut paths: Vec<_> =
        std::fs::read_dir(dir).map_err(io)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>().map_err(io)?;
    paths.retain(|p| p.is_file() && is_image_path(p));
    paths.sort();
    Ok(paths
        .into_iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            (name, ImageBuffer::load(&p).map_err(|e| e.to_string()))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RdRecord {
    pub image: String,
    pub quality: Quality,
    pub preset: String,
    pub bpp: f64,
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub ms_ssim_db: f64,
    pub ms_ssim_scales: usize,
    pub encode_seconds: f64,
    pub decode_seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RdAggregate {
    pub quality: Quality,
    pub preset: String,
    pub records: usize,
    pub ok: usize,
    pub bpp: f64,
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub ms_ssim_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RdTable {
    pub records: Vec<RdRecord>,
    pub aggregates: Vec<RdAggregate>,
}

/// Seed of the noise drawn for image `image` under preset `preset`;
/// independent of the model so every quality sees the same noisy input.
fn record_rng(seed: u64, image: usize, preset: GainPreset) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((image as u64) << 8) | preset.gain() as u64);
    rng
}

/// The 8-bit noisy observation of `clean` used for a record.
pub fn noisy_input(clean: &ImageBuffer, preset: GainPreset, seed: u64, image_index: usize) -> ImageBuffer {
    let mut rng = record_rng(seed, image_index, preset);
    let data = synthesize_noise_with(clean.data(), &preset.params(), &mut rng);
    ImageBuffer::new(clean.width(), clean.height(), data).expect("noise output lies in [0, 1]").quantized()
}

fn run_record(model: &CodecModel<f32>, clean: &ImageBuffer, preset: GainPreset, seed: u64, index: usize) -> EvalResult<RdRecord> {
    let noisy = noisy_input(clean, preset, seed, index);
    let t0 = Instant::now();
    let c = compress(model, &noisy)?;
    let t1 = Instant::now();
    let decoded = decompress(model, &c.bytes)?.quantized();
    let decode_seconds = t1.elapsed().as_secs_f64();
    let psnr_db = psnr(&decoded, clean).map_err(|e| EvalError::Invalid(e.to_string()))?;
    let (v, scales) = ms_ssim(&decoded, clean, None).map_err(|e| EvalError::Invalid(e.to_string()))?;
    Ok(RdRecord {
        image: String::new(),
        quality: model.quality,
        preset: preset.name().into(),
        bpp: c.bpp(),
        psnr_db,
        ms_ssim: v,
        ms_ssim_db: ms_ssim_db(v),
        ms_ssim_scales: scales,
        encode_seconds: (t1 - t0).as_secs_f64(),
        decode_seconds,
        error: None,
    })
}

/// Noisy-input sweep: for every (model, preset, image) synthesise noise,
/// compress, decompress and score against the clean image. Records run in
/// parallel; the table order does not depend on completion order.
pub fn evaluate_rd(images: &[NamedImage], models: &[CodecModel<f32>], presets: &[GainPreset], seed: u64) -> EvalResult<RdTable> {
    if images.is_empty() || models.is_empty() || presets.is_empty() {
        return Err(EvalError::Invalid("need at least one image, checkpoint and preset".into()));
    }
    let mut models: Vec<&CodecModel<f32>> = models.iter().collect();
    models.sort_by_key(|m| m.quality);
    if models.windows(2).any(|w| w[0].quality == w[1].quality) {
        return Err(EvalError::Invalid("two checkpoints share a quality level".into()));
    }
    let mut presets = presets.to_vec();
    presets.sort();
    presets.dedup();
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.sort_by(|&a, &b| images[a].0.cmp(&images[b].0));

    let mut jobs: Vec<(&CodecModel<f32>, GainPreset, usize)> = Vec::new();
    for &m in &models {
        for &p in &presets {
            jobs.extend(order.iter().map(|&i| (m, p, i)));
        }
    }
    let records: Vec<RdRecord> = jobs
        .par_iter()
        .map(|&(model, preset, i)| {
            let (name, img) = &images[i];
            let result = match img {
                Ok(clean) => run_record(model, clean, preset, seed, i),
                Err(e) => Err(EvalError::Invalid(e.clone())),
            };
            let mut r = result.unwrap_or_else(|e| RdRecord {
                image: String::new(),
                quality: model.quality,
                preset: preset.name().into(),
                bpp: f64::NAN,
                psnr_db: f64::NAN,
                ms_ssim: f64::NAN,
                ms_ssim_db: f64::NAN,
                ms_ssim_scales: 0,
                encode_seconds: 0.0,
                decode_seconds: 0.0,
                error: Some(e.to_string()),
            });
            r.image = name.clone();
            r
        })
        .collect();

    let aggregates = records
        .chunks(images.len())
        .map(|group| {
            let ok: Vec<&RdRecord> = group.iter().filter(|r| r.error.is_none()).collect();
            let mean = |f: fn(&RdRecord) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            let ms = mean(|r| r.ms_ssim);
            RdAggregate {
                quality: group[0].quality,
                preset: group[0].preset.clone(),
                records: group.len(),
                ok: ok.len(),
                bpp: mean(|r| r.bpp),
                psnr_db: mean(|r| r.psnr_db),
                ms_ssim: ms,
                ms_ssim_db: ms_ssim_db(ms),
            }
        })
        .collect();
    Ok(RdTable { records, aggregates })
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v == f64::INFINITY {
        "inf".into()
    } else {
        v.to_string()
    }
}

impl RdTable {
    pub fn all_failed(&self) -> bool {
        self.records.iter().all(|r| r.error.is_some())
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.records {
            let scales = if r.error.is_some() { String::new() } else { r.ms_ssim_scales.to_string() };
            w.write_record([
                "record".to_string(),
                r.image.clone(),
                r.quality.to_string(),
                r.preset.clone(),
                num(r.bpp),
                num(r.psnr_db),
                num(r.ms_ssim),
                num(r.ms_ssim_db),
                scales,
                r.error.clone().unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        for a in &self.aggregates {
            let note = if a.ok == a.records { String::new() } else { format!("{}/{} records ok", a.ok, a.records) };
            w.write_record([
                "aggregate".to_string(),
                String::new(),
                a.quality.to_string(),
                a.preset.clone(),
                num(a.bpp),
                num(a.psnr_db),
                num(a.ms_ssim),
                num(a.ms_ssim_db),
                String::new(),
                note,
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    /// Records (with timings) and aggregates as JSON; non-finite numbers
    /// become `null`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("table serialises")
    }
}
