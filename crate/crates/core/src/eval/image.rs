use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::tensor::{Shape, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("cannot read image {path}: {source}")]
    Read { path: String, source: image::ImageError },
    #[error("cannot write image {path}: {source}")]
    Write { path: String, source: image::ImageError },
    #[error("unsupported image extension for {0} (use .png or .ppm)")]
    Extension(String),
    #[error("image extents differ: {0}x{1} vs {2}x{3}")]
    Extent(usize, usize, usize, usize),
    #[error("invalid image: {0}")]
    Invalid(String),
}

/// An RGB image with planar values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    /// Planar R, G, B planes, row-major.
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return Err(ImageError::Invalid(format!("{} values for {width}x{height}x3", data.len())));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ImageError::Invalid("values must lie in [0, 1]".into()));
        }
        Ok(ImageBuffer { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x).clamp(0.0, 1.0));
                }
            }
        }
        ImageBuffer { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(Shape::new(1, 3, self.height, self.width), self.data.clone()).expect("consistent extents")
    }

    /// From a (1,3,H,W) tensor; values are clamped to `[0, 1]`.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self, ImageError> {
        let s = t.shape();
        if s.n() != 1 || s.c() != 3 {
            return Err(ImageError::Invalid(format!("expected a 1x3xHxW tensor, got {s}")));
        }
        Ok(ImageBuffer { width: s.w(), height: s.h(), data: t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect() })
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> ImageBuffer {
        assert!(y0 + h <= self.height && x0 + w <= self.width, "crop outside image");
        ImageBuffer::from_fn(w, h, |c, y, x| self.get(c, y0 + y, x0 + x))
    }

    /// 8-bit values, rounding half away from zero.
    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c| (self.get(c, y as usize, x as usize) * 255.0).round().clamp(0.0, 255.0) as u8;
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        ImageBuffer::from_fn(img.width() as usize, img.height() as usize, |c, y, x| {
            img.get_pixel(x as u32, y as u32).0[c] as f32 / 255.0
        })
    }

    /// Reads an 8-bit PNG or binary PPM.
    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let img = image::open(path).map_err(|source| ImageError::Read { path: path.display().to_string(), source })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    /// Writes PNG or binary PPM, chosen by extension.
    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        let format = format_for(path)?;
        self.to_rgb8()
            .save_with_format(path, format)
            .map_err(|source| ImageError::Write { path: path.display().to_string(), source })
    }

    /// The image after an 8-bit round trip.
    pub fn quantized(&self) -> ImageBuffer {
        Self::from_rgb8(&self.to_rgb8())
    }
}

fn format_for(path: &Path) -> Result<ImageFormat, ImageError> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("ppm") | Some("pnm") => Ok(ImageFormat::Pnm),
        _ => Err(ImageError::Extension(path.display().to_string())),
    }
}

/// True for file names the loaders accept.
pub fn is_image_path(path: &Path) -> bool {
    format_for(path).is_ok()
}
