//! Fundus image preprocessing: rasters, grayscale morphology, Lanczos
//! resampling, ImageNet normalization, augmentation and PPM/PGM I/O.

mod augment;
mod morphology;
mod pnm;
mod resample;

pub use augment::{augment, rotate_bilinear, scale_brightness, AugmentConfig};
pub use morphology::{
    black_hat, close, dilate, elliptical_kernel, enhance_green, erode, open, top_hat,
    StructuringElement,
};
pub use pnm::{read_pgm, read_pnm, read_ppm, write_pgm, write_ppm, Pnm};
pub use resample::{lanczos3, resize_lanczos, resize_lanczos_raw};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("invalid dimensions {width}x{height}")]
    Dimensions { width: usize, height: usize },
    #[error("pixel buffer has {got} values, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("structuring element must have odd positive dimensions, got {width}x{height}")]
    KernelShape { width: usize, height: usize },
    #[error("structuring element has no active cells")]
    EmptyKernel,
    #[error("structuring element {se_w}x{se_h} larger than image {width}x{height}")]
    KernelTooLarge {
        se_w: usize,
        se_h: usize,
        width: usize,
        height: usize,
    },
    #[error("parameter out of range: {0}")]
    Parameter(String),
    #[error("PNM decode: {0}")]
    Pnm(String),
}

/// Common access to 8-bit interleaved rasters.
pub trait Raster: Sized {
    const CHANNELS: usize;

    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn data(&self) -> &[u8];
    fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError>;
}

fn check_buffer(width: usize, height: usize, channels: usize, len: usize) -> Result<(), ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::Dimensions { width, height });
    }
    let expected = width * height * channels;
    if len != expected {
        return Err(ImageError::BufferSize { expected, got: len });
    }
    Ok(())
}

/// Single-channel 8-bit image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        check_buffer(width, height, 1, data.len())?;
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Result<Self, ImageError> {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, data)
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn pixels(&self) -> &[u8] {
        &self.data
    }

    /// `255 - p` for every pixel.
    pub fn invert(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|p| 255 - p).collect(),
        }
    }
}

impl Raster for GrayImage {
    const CHANNELS: usize = 1;

    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn data(&self) -> &[u8] {
        &self.data
    }
    fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        Self::new(width, height, data)
    }
}

/// Three-channel 8-bit image, row-major with interleaved RGB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        check_buffer(width, height, 3, data.len())?;
        Ok(RgbImage { width, height, data })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        f: impl Fn(usize, usize) -> [u8; 3],
    ) -> Result<Self, ImageError> {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .flat_map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, data)
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> &[u8] {
        &self.data
    }

    /// Extracts channel `c` (0 = red, 1 = green, 2 = blue).
    pub fn channel(&self, c: usize) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().skip(c).step_by(3).copied().collect(),
        }
    }

    pub fn green(&self) -> GrayImage {
        self.channel(1)
    }
}

impl Raster for RgbImage {
    const CHANNELS: usize = 3;

    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn data(&self) -> &[u8] {
        &self.data
    }
    fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        Self::new(width, height, data)
    }
}

/// Normalized float tensor, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

/// Input geometry and normalization statistics for each model branch.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSpec {
    pub dr_size: (usize, usize),
    pub me_size: (usize, usize),
    pub vlm_size: (usize, usize),
    pub mean: [f64; 3],
    pub std: [f64; 3],
    /// Side of the elliptical element used for ME lesion enhancement.
    pub me_kernel: usize,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        PreprocessSpec {
            dr_size: (512, 512),
            me_size: (224, 224),
            vlm_size: (448, 448),
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
            me_kernel: 15,
        }
    }
}

/// Per channel: `(p / 255 - mean[c]) / std[c]`.
pub fn normalize(img: &RgbImage, spec: &PreprocessSpec) -> Result<FloatImage, ImageError> {
    if spec.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(ImageError::Parameter("std components must be positive".into()));
    }
    let data = img
        .data
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let c = i % 3;
            ((p as f64 / 255.0 - spec.mean[c]) / spec.std[c]) as f32
        })
        .collect();
    Ok(FloatImage {
        width: img.width,
        height: img.height,
        channels: 3,
        data,
    })
}

/// Lanczos resize to the VLM resolution followed by normalization.
pub fn prepare_vlm_input(img: &RgbImage, spec: &PreprocessSpec) -> Result<FloatImage, ImageError> {
    let (w, h) = spec.vlm_size;
    normalize(&resize_lanczos(img, w, h)?, spec)
}
