//! Local gradient-orientation descriptors and the consolidated feature vector.
//!
//! The descriptor is an upright SIFT-style histogram: gradients inside a square
//! patch around the landmark are accumulated into `patch_cells x patch_cells`
//! spatial cells and `orientation_bins` signed orientation bins, with trilinear
//! interpolation and a Gaussian window. The histogram is L2-normalized,
//! clipped, and renormalized. No rotation or scale normalization is done; the
//! cascade extracts features in an aligned frame instead.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::geometry::{GrayImage, Shape};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptorParams {
    /// Spatial cells along each side of the patch.
    pub patch_cells: usize,
    pub orientation_bins: usize,
    /// Half the patch side, in pixels of the image being described.
    pub patch_radius: f64,
    /// Per-entry cap applied after the first normalization.
    pub clip_threshold: f64,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        Self {
            patch_cells: 4,
            orientation_bins: 8,
            patch_radius: 16.0,
            clip_threshold: 0.2,
        }
    }
}

impl DescriptorParams {
    /// Descriptor length `d = patch_cells² · orientation_bins`.
    pub fn descriptor_len(&self) -> usize {
        self.patch_cells * self.patch_cells * self.orientation_bins
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_cells == 0 || self.orientation_bins == 0 {
            return Err(Error::InvalidArg(
                "descriptor needs at least one cell and one orientation bin".into(),
            ));
        }
        if !(self.patch_radius > 0.0 && self.patch_radius.is_finite()) {
            return Err(Error::InvalidArg(format!(
                "patch radius must be positive, got {}",
                self.patch_radius
            )));
        }
        if !(self.clip_threshold > 0.0 && self.clip_threshold.is_finite()) {
            return Err(Error::InvalidArg(format!(
                "clip threshold must be positive, got {}",
                self.clip_threshold
            )));
        }
        Ok(())
    }
}

/// Feature vector for one shape: `p` descriptor blocks, optionally followed by
/// `2p` deformation-constraint entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    landmarks: usize,
    constrained: bool,
}

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn landmarks(&self) -> usize {
        self.landmarks
    }

    pub fn is_constrained(&self) -> bool {
        self.constrained
    }
}

pub fn extract_descriptor(img: &GrayImage, center: [f64; 2], params: &DescriptorParams) -> Vec<f64> {
    let mut out = vec![0.0; params.descriptor_len()];
    extract_descriptor_into(img, center, params, &mut out);
    out
}

/// Writes the descriptor for `center` into `out` (length `d`), overwriting it.
pub fn extract_descriptor_into(
    img: &GrayImage,
    center: [f64; 2],
    params: &DescriptorParams,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), params.descriptor_len());
    out.iter_mut().for_each(|v| *v = 0.0);
    let [cx, cy] = center;
    if !(cx.is_finite() && cy.is_finite()) {
        return;
    }
    let radius = params.patch_radius;
    let cells = params.patch_cells as i64;
    let bins = params.orientation_bins;
    let cell_size = 2.0 * radius / params.patch_cells as f64;
    let inv_two_sigma_sq = 1.0 / (2.0 * radius * radius);
    let bins_per_radian = bins as f64 / TAU;

    let x_start = (cx - radius).ceil() as i64;
    let y_start = (cy - radius).ceil() as i64;
    let (w, h) = (img.width() as i64, img.height() as i64);

    // The Gaussian window and the spatial cell interpolation are separable,
    // so both are tabulated once per column.
    let columns: Vec<(i64, f64, i64, f64)> = (0..)
        .map(|k| x_start + k)
        .take_while(|&x| (x as f64) < cx + radius)
        .map(|x| {
            let dx = x as f64 - cx;
            let u = (dx + radius) / cell_size - 0.5;
            let u0 = u.floor();
            (x, (-dx * dx * inv_two_sigma_sq).exp(), u0 as i64, u - u0)
        })
        .collect();

    let mut y = y_start;
    while (y as f64) < cy + radius {
        let dy = y as f64 - cy;
        let wy = (-dy * dy * inv_two_sigma_sq).exp();
        let v = (dy + radius) / cell_size - 0.5;
        let v0 = v.floor();
        let fv = v - v0;
        let v0 = v0 as i64;
        let row_inside = y >= 1 && y + 1 < h;
        for &(x, wx, u0, fu) in &columns {
            let (gx, gy) = if row_inside && x >= 1 && x + 1 < w {
                let (xu, yu) = (x as usize, y as usize);
                (
                    img.at(xu + 1, yu) as f64 - img.at(xu - 1, yu) as f64,
                    img.at(xu, yu + 1) as f64 - img.at(xu, yu - 1) as f64,
                )
            } else {
                (
                    img.get(x + 1, y) - img.get(x - 1, y),
                    img.get(x, y + 1) - img.get(x, y - 1),
                )
            };
            let mag_sq = gx * gx + gy * gy;
            if mag_sq == 0.0 {
                continue;
            }
            let weight = mag_sq.sqrt() * wx * wy;
            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += TAU;
            }
            let o = theta * bins_per_radian;
            let o0 = o.floor();
            let fo = o - o0;
            let b0 = (o0 as usize) % bins;
            let b1 = (b0 + 1) % bins;

            for (cv, wv) in [(v0, 1.0 - fv), (v0 + 1, fv)] {
                if cv < 0 || cv >= cells || wv == 0.0 {
                    continue;
                }
                for (cu, wu) in [(u0, 1.0 - fu), (u0 + 1, fu)] {
                    if cu < 0 || cu >= cells || wu == 0.0 {
                        continue;
                    }
                    let base = ((cv * cells + cu) as usize) * bins;
                    let wc = weight * wv * wu;
                    out[base + b0] += wc * (1.0 - fo);
                    out[base + b1] += wc * fo;
                }
            }
        }
        y += 1;
    }
    normalize_clip(out, params.clip_threshold);
}

fn normalize_clip(v: &mut [f64], clip: f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    let mut clipped = false;
    for x in v.iter_mut() {
        *x /= norm;
        if *x > clip {
            *x = clip;
            clipped = true;
        }
    }
    if clipped {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Concatenates the descriptors at every landmark of `s`, in landmark order.
pub fn extract_features(img: &GrayImage, s: &Shape, params: &DescriptorParams) -> FeatureVector {
    let d = params.descriptor_len();
    let mut values = vec![0.0; s.num_points() * d];
    for (i, block) in values.chunks_exact_mut(d).enumerate() {
        extract_descriptor_into(img, s.point(i), params, block);
    }
    FeatureVector {
        values,
        landmarks: s.num_points(),
        constrained: false,
    }
}

/// Appends the deformation-constraint entries `lambda · (s - prototype)`.
pub fn extend_constrained(
    f: FeatureVector,
    s: &Shape,
    prototype: &Shape,
    lambda: f64,
) -> Result<FeatureVector> {
    if f.constrained {
        return Err(Error::InvalidArg(
            "feature vector already carries constraint entries".into(),
        ));
    }
    if f.landmarks != s.num_points() {
        return Err(Error::LengthMismatch {
            expected: f.landmarks,
            found: s.num_points(),
        });
    }
    let diff = s.diff(prototype)?;
    let mut values = f.values;
    values.extend(diff.iter().map(|d| lambda * d));
    Ok(FeatureVector {
        values,
        landmarks: f.landmarks,
        constrained: true,
    })
}
