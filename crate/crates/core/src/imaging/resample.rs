//! Separable Lanczos-3 resampling.
//!
//! Output pixel centres map to `(i + 0.5) * in / out - 0.5` in source
//! coordinates. When downscaling, the kernel is stretched by the scale factor
//! so it also acts as the anti-aliasing filter. Taps falling outside the
//! image read the nearest edge pixel, and weights are normalized per output
//! sample.

use super::{ImageError, Raster};

const LOBES: f64 = 3.0;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// `sinc(x) * sinc(x / 3)` on `|x| < 3`, zero elsewhere.
pub fn lanczos3(x: f64) -> f64 {
    if x.abs() >= LOBES {
        0.0
    } else {
        sinc(x) * sinc(x / LOBES)
    }
}

/// Clamped source indices and normalized weights for each output index.
fn contributions(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = in_len as f64 / out_len as f64;
    let stretch = scale.max(1.0);
    let support = LOBES * stretch;
    (0..out_len)
        .map(|i| {
            let centre = (i as f64 + 0.5) * scale - 0.5;
            let lo = (centre - support).floor() as isize;
            let hi = (centre + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = (lo..=hi)
                .filter_map(|j| {
                    let w = lanczos3((j as f64 - centre) / stretch);
                    (w != 0.0).then(|| (j.clamp(0, in_len as isize - 1) as usize, w))
                })
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Resamples interleaved 8-bit data and returns the unrounded samples.
pub fn resize_lanczos_raw(
    data: &[u8],
    width: usize,
    height: usize,
    channels: usize,
    out_width: usize,
    out_height: usize,
) -> Result<Vec<f64>, ImageError> {
    if width == 0 || height == 0 || channels == 0 {
        return Err(ImageError::Dimensions { width, height });
    }
    if out_width == 0 || out_height == 0 {
        return Err(ImageError::Dimensions {
            width: out_width,
            height: out_height,
        });
    }
    if data.len() != width * height * channels {
        return Err(ImageError::BufferSize {
            expected: width * height * channels,
            got: data.len(),
        });
    }

    let xs = contributions(width, out_width);
    let ys = contributions(height, out_height);

    let mut horiz = vec![0.0f64; height * out_width * channels];
    for y in 0..height {
        let row = &data[y * width * channels..(y + 1) * width * channels];
        for (ox, taps) in xs.iter().enumerate() {
            for c in 0..channels {
                horiz[(y * out_width + ox) * channels + c] =
                    taps.iter().map(|&(sx, w)| w * row[sx * channels + c] as f64).sum();
            }
        }
    }

    let mut out = vec![0.0f64; out_height * out_width * channels];
    for (oy, taps) in ys.iter().enumerate() {
        for ox in 0..out_width {
            for c in 0..channels {
                out[(oy * out_width + ox) * channels + c] = taps
                    .iter()
                    .map(|&(sy, w)| w * horiz[(sy * out_width + ox) * channels + c])
                    .sum();
            }
        }
    }
    Ok(out)
}

/// Lanczos-3 resize with rounding and clamping to `[0, 255]`.
pub fn resize_lanczos<I: Raster>(img: &I, out_width: usize, out_height: usize) -> Result<I, ImageError> {
    let raw = resize_lanczos_raw(
        img.data(),
        img.width(),
        img.height(),
        I::CHANNELS,
        out_width,
        out_height,
    )?;
    let data = raw.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    I::from_raw(out_width, out_height, data)
}
