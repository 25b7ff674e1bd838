//! Shapes, affine transforms, and image warping.

mod affine;
mod image;
mod shape;

pub use affine::{
    alignment_error, apply_to_shape, fit_affine, fit_affine_with_residual, invert,
    AffineTransform, DEGENERACY_CONDITION,
};
pub use image::{warp_call_count, warp_image, GrayImage};
pub use shape::{canonical_normalize, mean_shape, Rect, Shape};
