//! Flat grayscale morphology with replicated borders.
//!
//! Erosion takes the minimum of `f(p + b)` and dilation the maximum of
//! `f(p - b)` over the active offsets `b` of the element (relative to its
//! centre). Reads outside the image are clamped to the nearest edge pixel.
//! For centrally symmetric, orthogonally convex elements such as
//! [`elliptical_kernel`], this pair is an adjunction on the clamped grid, so
//! opening and closing are idempotent and the hats are non-negative.

use super::{GrayImage, ImageError, RgbImage};

/// Odd-sized boolean mask anchored at its centre cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuringElement {
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

impl StructuringElement {
    pub fn from_mask(width: usize, height: usize, mask: Vec<bool>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || width % 2 == 0 || height % 2 == 0 {
            return Err(ImageError::KernelShape { width, height });
        }
        if mask.len() != width * height {
            return Err(ImageError::BufferSize {
                expected: width * height,
                got: mask.len(),
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(ImageError::EmptyKernel);
        }
        Ok(StructuringElement { width, height, mask })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn anchor(&self) -> (usize, usize) {
        ((self.width - 1) / 2, (self.height - 1) / 2)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Active offsets relative to the anchor.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let (ax, ay) = self.anchor();
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.contains(x, y))
            .map(|(x, y)| (x as isize - ax as isize, y as isize - ay as isize))
            .collect()
    }
}

/// Cell `(x, y)` is active iff `((x-cx)/rx)^2 + ((y-cy)/ry)^2 <= 1` with
/// `cx = (w-1)/2`, `cy = (h-1)/2`, `rx = w/2`, `ry = h/2`.
pub fn elliptical_kernel(width: usize, height: usize) -> Result<StructuringElement, ImageError> {
    if width == 0 || height == 0 || width % 2 == 0 || height % 2 == 0 {
        return Err(ImageError::KernelShape { width, height });
    }
    let (cx, cy) = ((width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0);
    let (rx, ry) = (width as f64 / 2.0, height as f64 / 2.0);
    let mask = (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .map(|(x, y)| {
            let dx = (x as f64 - cx) / rx;
            let dy = (y as f64 - cy) / ry;
            dx * dx + dy * dy <= 1.0
        })
        .collect();
    StructuringElement::from_mask(width, height, mask)
}

fn check_fits(img: &GrayImage, se: &StructuringElement) -> Result<(), ImageError> {
    if se.width > img.width || se.height > img.height {
        return Err(ImageError::KernelTooLarge {
            se_w: se.width,
            se_h: se.height,
            width: img.width,
            height: img.height,
        });
    }
    Ok(())
}

fn clamp_coord(v: isize, len: usize) -> usize {
    v.clamp(0, len as isize - 1) as usize
}

fn rank_filter(img: &GrayImage, offsets: &[(isize, isize)], take_max: bool) -> GrayImage {
    let (w, h) = (img.width, img.height);
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = if take_max { 0u8 } else { 255u8 };
            for &(dx, dy) in offsets {
                let sx = clamp_coord(x as isize + dx, w);
                let sy = clamp_coord(y as isize + dy, h);
                let v = img.data[sy * w + sx];
                acc = if take_max { acc.max(v) } else { acc.min(v) };
            }
            out[y * w + x] = acc;
        }
    }
    GrayImage {
        width: w,
        height: h,
        data: out,
    }
}

pub fn erode(img: &GrayImage, se: &StructuringElement) -> Result<GrayImage, ImageError> {
    check_fits(img, se)?;
    Ok(rank_filter(img, &se.offsets(), false))
}

pub fn dilate(img: &GrayImage, se: &StructuringElement) -> Result<GrayImage, ImageError> {
    check_fits(img, se)?;
    let reflected: Vec<_> = se.offsets().into_iter().map(|(dx, dy)| (-dx, -dy)).collect();
    Ok(rank_filter(img, &reflected, true))
}

/// Erosion followed by dilation.
pub fn open(img: &GrayImage, se: &StructuringElement) -> Result<GrayImage, ImageError> {
    dilate(&erode(img, se)?, se)
}

/// Dilation followed by erosion.
pub fn close(img: &GrayImage, se: &StructuringElement) -> Result<GrayImage, ImageError> {
    erode(&dilate(img, se)?, se)
}

fn saturating_diff(a: &GrayImage, b: &GrayImage) -> GrayImage {
    GrayImage {
        width: a.width,
        height: a.height,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x.saturating_sub(*y)).collect(),
    }
}

/// `img - open(img)`: small bright details.
pub fn top_hat(img: &GrayImage, se: &StructuringElement) -> Result<GrayImage, ImageError> {
    Ok(saturating_diff(img, &open(img, se)?))
}

/// `close(img) - img`: small dark details.
pub fn black_hat(img: &GrayImage, se: &StructuringElement) -> Result<GrayImage, ImageError> {
    Ok(saturating_diff(&close(img, se)?, img))
}

/// Green-channel lesion contrast: `clamp(g + top_hat(g) - black_hat(g))`.
pub fn enhance_green(img: &RgbImage, se: &StructuringElement) -> Result<GrayImage, ImageError> {
    let g = img.green();
    let th = top_hat(&g, se)?;
    let bh = black_hat(&g, se)?;
    let data = g
        .data
        .iter()
        .zip(th.data.iter().zip(&bh.data))
        .map(|(&v, (&t, &b))| (v as i16 + t as i16 - b as i16).clamp(0, 255) as u8)
        .collect();
    Ok(GrayImage {
        width: g.width,
        height: g.height,
        data,
    })
}
