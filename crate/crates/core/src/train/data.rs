//! Training data: image sets, random patches and synthetic textures.

use std::f64::consts::TAU;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::eval::image::{is_image_path, ImageBuffer, ImageError};
use crate::noise::{synthesize_noise_with, NoiseParams};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot list {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("no .png or .ppm images in {0}")]
    Empty(String),
    #[error("image {index} is {width}x{height}, smaller than the {size} px patch")]
    TooSmall { index: usize, width: usize, height: usize, size: usize },
}

/// An ordered collection of clean images.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    images: Vec<ImageBuffer>,
}

impl Dataset {
    pub fn new(images: Vec<ImageBuffer>) -> Self {
        Dataset { images }
    }

    /// Every PNG/PPM directly inside `dir`, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self, DataError> {
        let io = |source| DataError::Io { path: dir.display().to_string(), source };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(io)?;
        paths.retain(|p| p.is_file() && is_image_path(p));
        paths.sort();
        if paths.is_empty() {
            return Err(DataError::Empty(dir.display().to_string()));
        }
        let images = paths.iter().map(|p| ImageBuffer::load(p)).collect::<Result<_, _>>()?;
        Ok(Dataset { images })
    }

    /// Writes `img_0000.png`, ... into `dir` (created if missing).
    pub fn save_dir(&self, dir: &Path) -> Result<(), DataError> {
        std::fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.display().to_string(), source })?;
        for (i, img) in self.images.iter().enumerate() {
            img.save(&dir.join(format!("img_{i:04}.png")))?;
        }
        Ok(())
    }

    /// `count` procedural textures of `size x size`, reproducible from `seed`.
    pub fn synthetic(count: usize, size: usize, seed: u64) -> Self {
        let images = (0..count)
            .map(|i| {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                texture(size, &mut rng)
            })
            .collect();
        Dataset { images }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[ImageBuffer] {
        &self.images
    }

    /// Splits off the last `holdout` images.
    pub fn split(mut self, holdout: usize) -> (Dataset, Dataset) {
        let at = self.images.len().saturating_sub(holdout);
        let tail = self.images.split_off(at);
        (self, Dataset { images: tail })
    }

    /// Fails unless every image can supply a `size` patch.
    pub fn check_patch_size(&self, size: usize) -> Result<(), DataError> {
        for (index, img) in self.images.iter().enumerate() {
            if img.width() < size || img.height() < size {
                return Err(DataError::TooSmall { index, width: img.width(), height: img.height(), size });
            }
        }
        Ok(())
    }

    /// Uniformly placed `size x size` crop of image `index`.
    pub fn random_patch(&self, index: usize, size: usize, rng: &mut ChaCha20Rng) -> ImageBuffer {
        let img = &self.images[index];
        let y0 = rng.random_range(0..=img.height() - size);
        let x0 = rng.random_range(0..=img.width() - size);
        img.crop(y0, x0, size, size)
    }

    /// Top-left `size x size` crop of image `index`.
    pub fn fixed_patch(&self, index: usize, size: usize) -> ImageBuffer {
        self.images[index].crop(0, 0, size, size)
    }

    /// A permutation of the image indices.
    pub fn shuffled(&self, rng: &mut ChaCha20Rng) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.images.len()).collect();
        order.shuffle(rng);
        order
    }
}

/// A source/target pair of (N,3,P,P) tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Encoder input (noisy when fine-tuning).
    pub source: Tensor<f32>,
    /// Distortion target.
    pub clean: Tensor<f32>,
}

impl Batch {
    /// Stacks patches; with `noise`, each patch gets independent noise
    /// under the shared parameters.
    pub fn from_patches(patches: &[ImageBuffer], noise: Option<&NoiseParams>, rng: &mut ChaCha20Rng) -> Batch {
        let p = &patches[0];
        let shape = Shape::new(patches.len(), 3, p.height(), p.width());
        let clean: Vec<f32> = patches.iter().flat_map(|p| p.data().iter().copied()).collect();
        let source = match noise {
            Some(params) => patches.iter().flat_map(|p| synthesize_noise_with(p.data(), params, rng)).collect(),
            None => clean.clone(),
        };
        Batch {
            source: Tensor::from_vec(shape, source).expect("patches share extents"),
            clean: Tensor::from_vec(shape, clean).expect("patches share extents"),
        }
    }

    pub fn len(&self) -> usize {
        self.clean.shape().n()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One procedural texture: a smooth colour gradient, oriented gratings and
/// soft-edged shapes.
fn texture(size: usize, rng: &mut ChaCha20Rng) -> ImageBuffer {
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.8));
    let tilt: [[f64; 2]; 3] = std::array::from_fn(|_| [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)]);

    struct Grating {
        fx: f64,
        fy: f64,
        phase: f64,
        amp: [f64; 3],
    }
    let gratings: Vec<Grating> = (0..rng.random_range(1..=3))
        .map(|_| {
            let freq = rng.random_range(1.0..8.0) / size as f64;
            let angle = rng.random_range(0.0..TAU);
            let a = rng.random_range(0.03..0.15);
            Grating {
                fx: freq * angle.cos(),
                fy: freq * angle.sin(),
                phase: rng.random_range(0.0..TAU),
                amp: std::array::from_fn(|_| a * rng.random_range(0.5..1.0)),
            }
        })
        .collect();

    struct Shape2 {
        cx: f64,
        cy: f64,
        r: f64,
        square: bool,
        colour: [f64; 3],
    }
    let s = size as f64;
    let shapes: Vec<Shape2> = (0..rng.random_range(0..=4))
        .map(|_| Shape2 {
            cx: rng.random_range(0.0..s),
            cy: rng.random_range(0.0..s),
            r: rng.random_range(0.08..0.3) * s,
            square: rng.random_bool(0.5),
            colour: std::array::from_fn(|_| rng.random_range(0.05..0.95)),
        })
        .collect();

    ImageBuffer::from_fn(size, size, |c, y, x| {
        let (u, v) = (x as f64 / s - 0.5, y as f64 / s - 0.5);
        let mut val = base[c] + tilt[c][0] * u + tilt[c][1] * v;
        for g in &gratings {
            val += g.amp[c] * (TAU * (g.fx * x as f64 + g.fy * y as f64) + g.phase).sin();
        }
        for sh in &shapes {
            let (dx, dy) = (x as f64 - sh.cx, y as f64 - sh.cy);
            let d = if sh.square { dx.abs().max(dy.abs()) } else { dx.hypot(dy) };
            // Soft edge about one pixel wide.
            let w = 1.0 / (1.0 + ((d - sh.r) * 1.5).exp());
            val = val * (1.0 - w) + sh.colour[c] * w;
        }
        val as f32
    })
}
