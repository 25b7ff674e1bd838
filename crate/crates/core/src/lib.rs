//! Face landmark alignment by cascaded linear regression with a mixture of
//! affine-invariant experts.
//!
//! Each expert owns a prototype shape. At every cascade stage the current
//! landmark estimate is aligned to each prototype with a least-squares affine
//! fit, the image is warped into the prototype frame, and a ridge-regression
//! stage predicts a landmark update from local gradient descriptors. The
//! expert outputs are blended with softmax weights on the alignment residuals.

pub mod cascade;
pub mod clustering;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod io;
pub mod regression;
pub mod synth;

pub use error::{Error, Result};
