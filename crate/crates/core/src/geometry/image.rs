use std::cell::Cell;

use super::affine::AffineTransform;
use crate::error::{Error, Result};

/// Single-channel image with intensities in `[0, 1]`, stored row-major.
///
/// Pixel `(x, y)` has its center at coordinate `(x, y)`, the same frame as
/// landmark coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArg(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if width.checked_mul(height) != Some(pixels.len()) {
            return Err(Error::LengthMismatch {
                expected: width.saturating_mul(height),
                found: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width.saturating_mul(height)])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width.saturating_mul(height));
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    /// Pixel value, or 0 outside the image.
    #[inline]
    pub fn get(&self, x: i64, y: i64) -> f64 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            0.0
        } else {
            self.pixels[y as usize * self.width + x as usize] as f64
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Bilinear interpolation; samples outside the image contribute 0.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as i64, y0 as i64);
        let inside = xi >= 0
            && yi >= 0
            && xi + 1 < self.width as i64
            && yi + 1 < self.height as i64;
        let (v00, v10, v01, v11) = if inside {
            let i = yi as usize * self.width + xi as usize;
            (
                self.pixels[i] as f64,
                self.pixels[i + 1] as f64,
                self.pixels[i + self.width] as f64,
                self.pixels[i + self.width + 1] as f64,
            )
        } else {
            (
                self.get(xi, yi),
                self.get(xi + 1, yi),
                self.get(xi, yi + 1),
                self.get(xi + 1, yi + 1),
            )
        };
        (1.0 - fx) * (1.0 - fy) * v00
            + fx * (1.0 - fy) * v10
            + (1.0 - fx) * fy * v01
            + fx * fy * v11
    }
}

thread_local! {
    static WARP_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`warp_image`] calls made on the current thread.
pub fn warp_call_count() -> u64 {
    WARP_CALLS.with(|c| c.get())
}

/// Resamples `img` into an `out_w x out_h` image such that output pixel `q`
/// holds the bilinear sample of `img` at `t⁻¹(q)`.
pub fn warp_image(
    t: &AffineTransform,
    img: &GrayImage,
    out_w: usize,
    out_h: usize,
) -> Result<GrayImage> {
    WARP_CALLS.with(|c| c.set(c.get() + 1));
    let inv = t.invert()?;
    let mut pixels = Vec::with_capacity(out_w.saturating_mul(out_h));
    let [[a, b], [c, d]] = inv.linear;
    for y in 0..out_h {
        let yf = y as f64;
        for x in 0..out_w {
            let xf = x as f64;
            let sx = a * xf + b * yf + inv.translation[0];
            let sy = c * xf + d * yf + inv.translation[1];
            pixels.push(img.sample_bilinear(sx, sy) as f32);
        }
    }
    GrayImage::new(out_w, out_h, pixels)
}
