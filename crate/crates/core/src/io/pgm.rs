use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::GrayImage;

const MAX_PIXELS: usize = 1 << 28;

/// Decodes a binary (P5) PGM with 8- or 16-bit samples into `[0, 1]`
/// intensities.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::UnsupportedFormat("not a binary PGM (missing P5 magic)".into()));
    }
    let mut pos = 2;
    let mut header = [0usize; 3];
    for (i, field) in header.iter_mut().enumerate() {
        // Whitespace and comments before each header number.
        loop {
            match bytes.get(pos) {
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let name = ["width", "height", "maxval"][i];
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::UnsupportedFormat(format!("PGM header has no valid {name}")))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::UnsupportedFormat("PGM header not terminated by whitespace".into()));
    }
    pos += 1;
    let [width, height, maxval] = header;
    if width == 0 || height == 0 {
        return Err(Error::UnsupportedFormat(format!("PGM has empty size {width}x{height}")));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(Error::UnsupportedFormat(format!("PGM maxval {maxval} out of range")));
    }
    let n = width
        .checked_mul(height)
        .filter(|&n| n <= MAX_PIXELS)
        .ok_or_else(|| Error::UnsupportedFormat(format!("PGM size {width}x{height} too large")))?;
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let data = &bytes[pos..];
    if data.len() != n * bytes_per {
        return Err(Error::UnsupportedFormat(format!(
            "PGM raster has {} bytes, expected {}",
            data.len(),
            n * bytes_per
        )));
    }
    let scale = maxval as f32;
    let pixels = if bytes_per == 1 {
        data.iter().map(|&b| (b as f32 / scale).min(1.0)).collect()
    } else {
        data.chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f32 / scale).min(1.0))
            .collect()
    };
    GrayImage::new(width, height, pixels)
}

/// Encodes as an 8-bit P5 PGM, rounding and clamping intensities.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn write_image(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    super::text::write_atomic(path.as_ref(), &encode_pgm(img))
}
