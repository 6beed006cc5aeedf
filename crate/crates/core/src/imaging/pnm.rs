//! Binary PGM (P5) and PPM (P6) with maxval 255.

use super::{GrayImage, ImageError, RgbImage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pnm {
    Gray(GrayImage),
    Rgb(RgbImage),
}

struct Header<'a> {
    magic: [u8; 2],
    width: usize,
    height: usize,
    raster: &'a [u8],
}

fn pnm_err(msg: impl Into<String>) -> ImageError {
    ImageError::Pnm(msg.into())
}

fn skip_space_and_comments(bytes: &[u8], mut i: usize) -> usize {
    loop {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
        } else {
            return i;
        }
    }
}

fn read_number(bytes: &[u8], i: usize) -> Result<(usize, usize), ImageError> {
    let start = skip_space_and_comments(bytes, i);
    let end = start + bytes[start..].iter().take_while(|b| b.is_ascii_digit()).count();
    if end == start {
        return Err(pnm_err("expected a header number"));
    }
    let n = std::str::from_utf8(&bytes[start..end])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| pnm_err("header number out of range"))?;
    Ok((n, end))
}

fn parse_header(bytes: &[u8]) -> Result<Header<'_>, ImageError> {
    if bytes.len() < 2 {
        return Err(pnm_err("missing magic"));
    }
    let magic = [bytes[0], bytes[1]];
    if magic != *b"P5" && magic != *b"P6" {
        return Err(pnm_err(format!("unsupported magic {:?}", String::from_utf8_lossy(&magic))));
    }
    let (width, i) = read_number(bytes, 2)?;
    let (height, i) = read_number(bytes, i)?;
    let (maxval, i) = read_number(bytes, i)?;
    if maxval != 255 {
        return Err(pnm_err(format!("maxval {maxval} unsupported")));
    }
    if width == 0 || height == 0 {
        return Err(ImageError::Dimensions { width, height });
    }
    if bytes.get(i).is_none_or(|b| !b.is_ascii_whitespace()) {
        return Err(pnm_err("missing whitespace before raster"));
    }
    Ok(Header {
        magic,
        width,
        height,
        raster: &bytes[i + 1..],
    })
}

fn raster(h: &Header<'_>, channels: usize) -> Result<Vec<u8>, ImageError> {
    let n = h
        .width
        .checked_mul(h.height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| pnm_err("dimensions overflow"))?;
    if h.raster.len() < n {
        return Err(pnm_err(format!("raster truncated: {} of {n} bytes", h.raster.len())));
    }
    Ok(h.raster[..n].to_vec())
}

pub fn read_pnm(bytes: &[u8]) -> Result<Pnm, ImageError> {
    let h = parse_header(bytes)?;
    match &h.magic {
        b"P5" => Ok(Pnm::Gray(GrayImage::new(h.width, h.height, raster(&h, 1)?)?)),
        _ => Ok(Pnm::Rgb(RgbImage::new(h.width, h.height, raster(&h, 3)?)?)),
    }
}

/// Reads a PPM, or a PGM replicated to three channels.
pub fn read_ppm(bytes: &[u8]) -> Result<RgbImage, ImageError> {
    match read_pnm(bytes)? {
        Pnm::Rgb(img) => Ok(img),
        Pnm::Gray(g) => RgbImage::new(
            g.width,
            g.height,
            g.data.iter().flat_map(|&v| [v, v, v]).collect(),
        ),
    }
}

pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    match read_pnm(bytes)? {
        Pnm::Gray(img) => Ok(img),
        Pnm::Rgb(_) => Err(pnm_err("expected P5, found P6")),
    }
}

fn encode(magic: &str, width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

pub fn write_ppm(img: &RgbImage) -> Vec<u8> {
    encode("P6", img.width, img.height, &img.data)
}

pub fn write_pgm(img: &GrayImage) -> Vec<u8> {
    encode("P5", img.width, img.height, &img.data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let rgb = RgbImage::from_fn(3, 2, |x, y| [x as u8, y as u8, 255]).unwrap();
        assert_eq!(read_ppm(&write_ppm(&rgb)).unwrap(), rgb);
        let g = GrayImage::from_fn(4, 3, |x, y| (x * y) as u8).unwrap();
        assert_eq!(read_pgm(&write_pgm(&g)).unwrap(), g);
    }

    #[test]
    fn header_comments() {
        let mut bytes = b"P5 # a comment\n2 # width\n1\n255\n".to_vec();
        bytes.extend([7, 9]);
        assert_eq!(read_pgm(&bytes).unwrap().pixels(), [7, 9]);
    }

    #[test]
    fn gray_promotes_to_rgb() {
        let g = GrayImage::new(1, 1, vec![42]).unwrap();
        assert_eq!(read_ppm(&write_pgm(&g)).unwrap().get(0, 0), [42, 42, 42]);
    }

    #[test]
    fn malformed_inputs() {
        assert!(read_pnm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(read_pnm(b"P6\n2 2\n255\n\x00\x00").is_err());
        assert!(read_pnm(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(read_pnm(b"P5\n1").is_err());
        assert!(read_pnm(b"").is_err());
    }
}
