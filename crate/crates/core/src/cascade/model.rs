use crate::clustering::TransformClass;
use crate::error::{Error, Result};
use crate::features::DescriptorParams;
use crate::geometry::{Rect, Shape};
use crate::regression::RegressionStage;

/// Whether stage features carry the deformation-constraint tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureMode {
    Plain,
    #[default]
    Constrained,
}

/// One cascade of regression stages tied to a prototype shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    /// Prototype in frame pixels.
    pub prototype: Shape,
    pub stages: Vec<RegressionStage>,
}

/// A trained mixture of cascades.
///
/// Prototypes and the mean shape live in the prototype frame: canonical
/// coordinates (zero centroid, unit RMS radius) multiplied by `frame_scale`,
/// the typical face radius in training pixels. Descriptor patch sizes are
/// therefore comparable between invariant and non-invariant models.
#[derive(Debug, Clone, PartialEq)]
pub struct MixModel {
    pub experts: Vec<Expert>,
    pub descriptor: DescriptorParams,
    pub feature_mode: FeatureMode,
    /// `Identity` disables alignment to the prototype (plain SDM behaviour).
    pub transform: TransformClass,
    /// Constraint weight in canonical units.
    pub lambda: f64,
    /// Gating temperature, in squared frame pixels per landmark.
    pub temperature: f64,
    pub frame_scale: f64,
    pub mean_shape: Shape,
    /// Detector box, in mean-shape coordinates, that the mean shape is fitted to.
    pub reference_box: Rect,
    /// Training configuration, as `key = value` text.
    pub config_echo: String,
}

impl MixModel {
    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn num_stages(&self) -> usize {
        self.experts.first().map_or(0, |e| e.stages.len())
    }

    pub fn num_points(&self) -> usize {
        self.mean_shape.num_points()
    }

    /// Length of the per-stage feature vector.
    pub fn feature_len(&self) -> usize {
        let p = self.num_points();
        p * self.descriptor.descriptor_len()
            + match self.feature_mode {
                FeatureMode::Plain => 0,
                FeatureMode::Constrained => 2 * p,
            }
    }

    /// Constraint weight applied to frame-pixel differences.
    pub fn effective_lambda(&self) -> f64 {
        self.lambda / self.frame_scale
    }

    /// Checks every structural invariant a usable model must satisfy.
    pub fn validate(&self) -> Result<()> {
        self.descriptor.validate()?;
        if self.experts.is_empty() {
            return Err(Error::InvalidArg("model has no experts".into()));
        }
        if self.transform == TransformClass::Identity && self.experts.len() != 1 {
            return Err(Error::InvalidArg(
                "a model without alignment must have exactly one expert".into(),
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArg(format!("gating temperature must be positive, got {}", self.temperature)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArg(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.frame_scale > 0.0 && self.frame_scale.is_finite()) {
            return Err(Error::InvalidArg(format!("frame scale must be positive, got {}", self.frame_scale)));
        }
        let r = &self.reference_box;
        if !(r.width() > 0.0 && r.height() > 0.0 && [r.left, r.top, r.right, r.bottom].iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidArg("reference box is empty".into()));
        }
        let k = self.num_stages();
        let dim = 2 * self.num_points();
        let f = self.feature_len();
        for e in &self.experts {
            self.mean_shape.check_same_len(&e.prototype)?;
            if e.stages.len() != k {
                return Err(Error::LengthMismatch {
                    expected: k,
                    found: e.stages.len(),
                });
            }
            for s in &e.stages {
                if s.input_len() != f {
                    return Err(Error::LengthMismatch {
                        expected: f,
                        found: s.input_len(),
                    });
                }
                if s.output_len() != dim {
                    return Err(Error::LengthMismatch {
                        expected: dim,
                        found: s.output_len(),
                    });
                }
            }
        }
        Ok(())
    }
}
