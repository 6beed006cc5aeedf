//! Training-time augmentation: small rotations and brightness scaling.

use rand::Rng;

use super::{ImageError, RgbImage};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Rotations are drawn from `[-max, max]` degrees.
    pub max_rotation_deg: f64,
    pub brightness_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_rotation_deg: 15.0,
            brightness_range: (0.8, 1.2),
        }
    }
}

impl AugmentConfig {
    fn validate(&self) -> Result<(), ImageError> {
        let (lo, hi) = self.brightness_range;
        if !(self.max_rotation_deg.is_finite() && self.max_rotation_deg >= 0.0) {
            return Err(ImageError::Parameter("max rotation must be non-negative".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
            return Err(ImageError::Parameter(format!(
                "brightness range ({lo}, {hi}) must satisfy 0 < lo <= hi"
            )));
        }
        Ok(())
    }
}

fn sample(img: &RgbImage, sx: f64, sy: f64, c: usize) -> f64 {
    const EDGE: f64 = 1e-9;
    let (w, h) = (img.width as f64, img.height as f64);
    if sx < -EDGE || sy < -EDGE || sx > w - 1.0 + EDGE || sy > h - 1.0 + EDGE {
        return 0.0;
    }
    let sx = sx.clamp(0.0, w - 1.0);
    let sy = sy.clamp(0.0, h - 1.0);
    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
    let p = |x: usize, y: usize| img.data[(y * img.width + x) * 3 + c] as f64;
    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
    let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Rotates counter-clockwise (as displayed) about the image centre with
/// bilinear sampling. Pixels mapping outside the source are black.
pub fn rotate_bilinear(img: &RgbImage, degrees: f64) -> RgbImage {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(img.data.len());
    for y in 0..img.height {
        for x in 0..img.width {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = cx + cos * dx - sin * dy;
            let sy = cy + sin * dx + cos * dy;
            for c in 0..3 {
                data.push(sample(img, sx, sy, c).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Scales every channel by `factor`, rounding and saturating.
pub fn scale_brightness(img: &RgbImage, factor: f64) -> RgbImage {
    RgbImage {
        width: img.width,
        height: img.height,
        data: img
            .data
            .iter()
            .map(|&p| (p as f64 * factor).round().clamp(0.0, 255.0) as u8)
            .collect(),
    }
}

/// Applies an explicit rotation and brightness factor after range checks.
pub fn augment(
    img: &RgbImage,
    config: &AugmentConfig,
    rotation_deg: f64,
    brightness: f64,
) -> Result<RgbImage, ImageError> {
    config.validate()?;
    if !rotation_deg.is_finite() || rotation_deg.abs() > config.max_rotation_deg {
        return Err(ImageError::Parameter(format!(
            "rotation {rotation_deg} outside +/-{}",
            config.max_rotation_deg
        )));
    }
    let (lo, hi) = config.brightness_range;
    if !(lo..=hi).contains(&brightness) {
        return Err(ImageError::Parameter(format!(
            "brightness {brightness} outside [{lo}, {hi}]"
        )));
    }
    Ok(scale_brightness(&rotate_bilinear(img, rotation_deg), brightness))
}

impl AugmentConfig {
    /// Draws a rotation and brightness factor uniformly from the configured ranges.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(f64, f64), ImageError> {
        self.validate()?;
        let m = self.max_rotation_deg;
        let rot = if m == 0.0 { 0.0 } else { rng.random_range(-m..=m) };
        let (lo, hi) = self.brightness_range;
        let b = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        Ok((rot, b))
    }

    pub fn apply_random<R: Rng + ?Sized>(&self, img: &RgbImage, rng: &mut R) -> Result<RgbImage, ImageError> {
        let (rot, b) = self.sample(rng)?;
        augment(img, self, rot, b)
    }
}
