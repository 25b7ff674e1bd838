use super::model::{FeatureMode, MixModel};
use crate::clustering::TransformClass;
use crate::error::{Error, Result};
use crate::features::{extract_descriptor_into, DescriptorParams};
use crate::geometry::{alignment_error, fit_affine, warp_image, AffineTransform, GrayImage, Rect, Shape};
use crate::regression::RegressionStage;

/// Largest warped patch region, in pixels per side, before a shape is
/// considered to have diverged.
const MAX_REGION: f64 = 8192.0;

/// Everything needed to turn an image and a shape estimate into stage
/// features.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FeatureConfig {
    pub descriptor: DescriptorParams,
    pub feature_mode: FeatureMode,
    pub transform: TransformClass,
    /// Multiplier for frame-pixel constraint differences.
    pub lambda_eff: f64,
}

impl FeatureConfig {
    pub fn of(model: &MixModel) -> Self {
        Self {
            descriptor: model.descriptor,
            feature_mode: model.feature_mode,
            transform: model.transform,
            lambda_eff: model.effective_lambda(),
        }
    }

    pub fn feature_len(&self, p: usize) -> usize {
        p * self.descriptor.descriptor_len()
            + match self.feature_mode {
                FeatureMode::Plain => 0,
                FeatureMode::Constrained => 2 * p,
            }
    }
}

/// Writes the stage features of `s` into `out` and returns the alignment
/// `A` into the prototype frame together with `A(s)`.
///
/// Only the part of the frame around the aligned shape is resampled: an
/// integer offset is folded into the warp, which leaves the descriptors
/// unchanged.
pub(crate) fn frame_features_into(
    img: &GrayImage,
    s: &Shape,
    prototype: &Shape,
    cfg: &FeatureConfig,
    out: &mut [f64],
) -> Result<(AffineTransform, Shape)> {
    let p = s.num_points();
    let d = cfg.descriptor.descriptor_len();
    if out.len() != cfg.feature_len(p) {
        return Err(Error::LengthMismatch {
            expected: cfg.feature_len(p),
            found: out.len(),
        });
    }
    let (a, framed) = match cfg.transform {
        TransformClass::Identity => {
            for (i, block) in out[..p * d].chunks_exact_mut(d).enumerate() {
                extract_descriptor_into(img, s.point(i), &cfg.descriptor, block);
            }
            (AffineTransform::identity(), s.clone())
        }
        TransformClass::Affine => {
            let a = fit_affine(s, prototype)?;
            let framed = a.apply_to_shape(s);
            let bb = framed.bounding_box();
            let margin = cfg.descriptor.patch_radius + 2.0;
            let ox = (bb.left - margin).floor();
            let oy = (bb.top - margin).floor();
            let w = (bb.right + margin).ceil() - ox + 1.0;
            let h = (bb.bottom + margin).ceil() - oy + 1.0;
            if !(w <= MAX_REGION && h <= MAX_REGION) {
                return Err(Error::DegenerateShape(format!(
                    "aligned shape spans {w}x{h} pixels; the estimate has diverged"
                )));
            }
            let t = AffineTransform::translation(-ox, -oy).compose(&a);
            let patch = warp_image(&t, img, w as usize, h as usize)?;
            for (i, block) in out[..p * d].chunks_exact_mut(d).enumerate() {
                let [x, y] = framed.point(i);
                extract_descriptor_into(&patch, [x - ox, y - oy], &cfg.descriptor, block);
            }
            (a, framed)
        }
    };
    if cfg.feature_mode == FeatureMode::Constrained {
        for ((o, x), m) in out[p * d..].iter_mut().zip(framed.as_slice()).zip(prototype.as_slice()) {
            *o = cfg.lambda_eff * (x - m);
        }
    }
    Ok((a, framed))
}

/// Maps a frame-space update back to image coordinates.
pub(crate) fn apply_update(a: &AffineTransform, framed: &Shape, delta: &[f64], transform: TransformClass) -> Result<Shape> {
    let next = framed.displaced(delta)?;
    match transform {
        TransformClass::Identity => Ok(next),
        TransformClass::Affine => Ok(a.invert()?.apply_to_shape(&next)),
    }
}

/// One regression stage executed in the frame of `prototype`: align the
/// estimate to the prototype, describe the warped image there, regress an
/// update, and map the updated shape back.
pub fn ti_sdm_stage(
    img: &GrayImage,
    s: &Shape,
    prototype: &Shape,
    stage: &RegressionStage,
    model: &MixModel,
) -> Result<Shape> {
    s.check_same_len(prototype)?;
    let cfg = FeatureConfig::of(model);
    let mut phi = vec![0.0; cfg.feature_len(s.num_points())];
    let (a, framed) = frame_features_into(img, s, prototype, &cfg, &mut phi)?;
    let delta = stage.predict(&phi)?;
    apply_update(&a, &framed, &delta, cfg.transform)
}

/// Softmax of `-errors / temperature`, shifted by the smallest error.
pub fn softmax_gating(errors: &[f64], temperature: f64) -> Vec<f64> {
    let min = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = errors.iter().map(|e| (-(e - min) / temperature).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Gating weights of `s` against `prototypes`.
pub(crate) fn gate(s: &Shape, prototypes: &[&Shape], temperature: f64) -> Result<Vec<f64>> {
    if prototypes.len() == 1 {
        return Ok(vec![1.0]);
    }
    let errors = prototypes
        .iter()
        .map(|proto| alignment_error(s, proto))
        .collect::<Result<Vec<f64>>>()?;
    Ok(softmax_gating(&errors, temperature))
}

/// Expert weights for the estimate `s`: a softmax over the negative
/// per-landmark alignment errors to each prototype.
pub fn gating_weights(s: &Shape, model: &MixModel) -> Result<Vec<f64>> {
    let protos: Vec<&Shape> = model.experts.iter().map(|e| &e.prototype).collect();
    gate(s, &protos, model.temperature)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignTrace {
    /// Initial shape followed by the estimate after every stage.
    pub shapes: Vec<Shape>,
    /// Gating weights used at every stage.
    pub gatings: Vec<Vec<f64>>,
}

/// Runs the gated cascade from `s0`: at every stage each expert proposes an
/// update in its own frame and the proposals are averaged with the gating
/// weights, in expert order.
pub fn mix_align(img: &GrayImage, s0: &Shape, model: &MixModel) -> Result<(Shape, AlignTrace)> {
    model.validate()?;
    s0.check_same_len(&model.mean_shape)?;
    let mut x = s0.clone();
    let mut trace = AlignTrace {
        shapes: vec![x.clone()],
        gatings: Vec::new(),
    };
    for k in 0..model.num_stages() {
        let alpha = gating_weights(&x, model)?;
        let mut acc = vec![0.0; x.as_slice().len()];
        for (expert, &w) in model.experts.iter().zip(&alpha) {
            if w == 0.0 {
                continue;
            }
            let out = ti_sdm_stage(img, &x, &expert.prototype, &expert.stages[k], model)?;
            acc.iter_mut().zip(out.as_slice()).for_each(|(a, o)| *a += w * o);
        }
        x = Shape::new(acc).map_err(|_| Error::DegenerateShape("cascade produced non-finite landmarks".into()))?;
        trace.shapes.push(x.clone());
        trace.gatings.push(alpha);
    }
    Ok((x, trace))
}

/// The model's mean shape moved and uniformly scaled so that its reference
/// box lands on `bbox` (same centre, same larger side).
pub fn init_from_bbox(bbox: &Rect, model: &MixModel) -> Result<Shape> {
    let finite = [bbox.left, bbox.top, bbox.right, bbox.bottom].iter().all(|v| v.is_finite());
    if !(finite && bbox.width() > 0.0 && bbox.height() > 0.0) {
        return Err(Error::InvalidArg(format!(
            "bounding box ({}, {}, {}, {}) is empty",
            bbox.left, bbox.top, bbox.right, bbox.bottom
        )));
    }
    let r = &model.reference_box;
    let scale = bbox.larger_side() / r.larger_side();
    let [rc_x, rc_y] = r.center();
    let [bc_x, bc_y] = bbox.center();
    let coords = model
        .mean_shape
        .points()
        .flat_map(|[x, y]| [(x - rc_x) * scale + bc_x, (y - rc_y) * scale + bc_y])
        .collect();
    Shape::new(coords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::model::Expert;
    use crate::geometry::warp_call_count;

    fn face() -> Shape {
        Shape::from_points(&[[-20.0, -10.0], [20.0, -12.0], [0.0, 4.0], [-12.0, 18.0], [13.0, 17.0]]).unwrap()
    }

    fn model_with(experts: Vec<Expert>, transform: TransformClass, mode: FeatureMode) -> MixModel {
        MixModel {
            experts,
            descriptor: DescriptorParams {
                patch_radius: 6.0,
                ..DescriptorParams::default()
            },
            feature_mode: mode,
            transform,
            lambda: 1.0,
            temperature: 1.0,
            frame_scale: 20.0,
            mean_shape: face(),
            reference_box: face().bounding_box(),
            config_echo: String::new(),
        }
    }

    fn zero_model(protos: Vec<Shape>, k: usize, transform: TransformClass) -> MixModel {
        let mut m = model_with(Vec::new(), transform, FeatureMode::Constrained);
        let f = m.feature_len();
        m.experts = protos
            .into_iter()
            .map(|prototype| Expert {
                prototype,
                stages: vec![RegressionStage::zeros(10, f); k],
            })
            .collect();
        m
    }

    fn textured(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let (x, y) = (x as f32, y as f32);
            0.5 + 0.25 * (0.21 * x + 0.05 * y).sin() * (0.13 * y - 0.07 * x).cos()
        })
        .unwrap()
    }

    fn posed(s: &Shape) -> Shape {
        let t = AffineTransform::translation(60.0, 55.0)
            .compose(&AffineTransform::rotation(0.3))
            .compose(&AffineTransform::scaling(1.3, 1.1));
        t.apply_to_shape(s)
    }

    #[test]
    fn zero_stage_returns_input() {
        let m = zero_model(vec![face()], 1, TransformClass::Affine);
        let s = posed(&face()).displaced(&[1.0, -2.0, 0.5, 0.0, 0.0, 1.5, -1.0, 0.0, 0.3, 0.2]).unwrap();
        let out = ti_sdm_stage(&textured(128, 128), &s, &face(), &m.experts[0].stages[0], &m).unwrap();
        assert!(out.diff(&s).unwrap().iter().all(|d| d.abs() < 1e-7));
    }

    #[test]
    fn pure_bias_stage_lands_on_mapped_prototype() {
        let m = zero_model(vec![face()], 1, TransformClass::Affine);
        let s = posed(&face()).displaced(&[1.0, -2.0, 0.5, 0.0, 0.0, 1.5, -1.0, 0.0, 0.3, 0.2]).unwrap();
        let a = fit_affine(&s, &face()).unwrap();
        let bias = face().diff(&a.apply_to_shape(&s)).unwrap();
        let stage = RegressionStage::new(vec![0.0; 10 * m.feature_len()], bias, m.feature_len()).unwrap();
        let out = ti_sdm_stage(&textured(128, 128), &s, &face(), &stage, &m).unwrap();
        let expected = a.invert().unwrap().apply_to_shape(&face());
        assert!(out.diff(&expected).unwrap().iter().all(|d| d.abs() < 1e-7));
    }

    #[test]
    fn softmax_reference_cases() {
        let w = softmax_gating(&[0.0, 3f64.ln()], 1.0);
        assert!((w[0] - 0.75).abs() < 1e-12 && (w[1] - 0.25).abs() < 1e-12);
        let u = softmax_gating(&[2.5; 4], 0.3);
        assert!(u.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let far = softmax_gating(&[0.0, 1e6, 1e9], 1.0);
        assert_eq!(far, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn gating_prefers_matching_prototype() {
        let other = Shape::from_points(&[[-20.0, -10.0], [20.0, -12.0], [0.0, 14.0], [-16.0, 12.0], [9.0, 25.0]]).unwrap();
        let m = zero_model(vec![other, face()], 1, TransformClass::Affine);
        let w = gating_weights(&posed(&face()), &m).unwrap();
        assert!(w[1] > 0.999, "{w:?}");
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_expert_equals_repeated_stage() {
        let mut m = zero_model(vec![face()], 3, TransformClass::Affine);
        let f = m.feature_len();
        for (k, st) in m.experts[0].stages.iter_mut().enumerate() {
            let w = (0..10 * f).map(|i| ((i * 7 + k * 3) % 11) as f64 * 1e-3 - 5e-3).collect();
            *st = RegressionStage::new(w, vec![0.1 * k as f64; 10], f).unwrap();
        }
        let img = textured(128, 128);
        let s0 = posed(&face());
        let (out, trace) = mix_align(&img, &s0, &m).unwrap();
        let mut x = s0.clone();
        for st in &m.experts[0].stages {
            x = ti_sdm_stage(&img, &x, &face(), st, &m).unwrap();
        }
        assert_eq!(out, x);
        assert_eq!(trace.shapes.len(), 4);
        assert!(trace.gatings.iter().all(|g| g == &[1.0]));
    }

    #[test]
    fn zero_model_keeps_initialization() {
        let other = Shape::from_points(&[[-20.0, -10.0], [20.0, -12.0], [0.0, 14.0], [-16.0, 12.0], [9.0, 25.0]]).unwrap();
        let m = zero_model(vec![face(), other], 2, TransformClass::Affine);
        let s0 = posed(&face()).displaced(&[0.5; 10]).unwrap();
        let (out, _) = mix_align(&textured(128, 128), &s0, &m).unwrap();
        assert!(out.diff(&s0).unwrap().iter().all(|d| d.abs() < 1e-7));
    }

    #[test]
    fn two_experts_combine_convexly() {
        let other = Shape::from_points(&[[-20.0, -10.0], [20.0, -12.0], [0.0, 6.0], [-13.0, 17.0], [12.0, 19.0]]).unwrap();
        let mut m = zero_model(vec![face(), other.clone()], 1, TransformClass::Affine);
        m.temperature = 0.5;
        let f = m.feature_len();
        let biases = [vec![1.0, 0.0].repeat(5), vec![0.0, -2.0].repeat(5)];
        for (e, b) in m.experts.iter_mut().zip(&biases) {
            e.stages[0] = RegressionStage::new(vec![0.0; 10 * f], b.clone(), f).unwrap();
        }
        let s0 = posed(&face()).displaced(&[0.4, -0.3, 0.0, 0.8, -0.5, 0.0, 0.2, 0.2, 0.0, -0.6]).unwrap();
        let (out, _) = mix_align(&textured(128, 128), &s0, &m).unwrap();

        let eps: Vec<f64> = [face(), other].iter().map(|p| alignment_error(&s0, p).unwrap()).collect();
        let z: Vec<f64> = eps.iter().map(|e| (-e / 0.5).exp()).collect();
        let alpha: Vec<f64> = z.iter().map(|v| v / (z[0] + z[1])).collect();
        let mut expected = vec![0.0; 10];
        for (l, (p, b)) in m.experts.iter().map(|e| &e.prototype).zip(&biases).enumerate() {
            // A bias-only stage moves every point by the frame offset mapped
            // back through the inverse linear part.
            let a = fit_affine(&s0, p).unwrap().invert().unwrap();
            let moved = s0.displaced(&a.apply_to_displacement(b)).unwrap();
            expected.iter_mut().zip(moved.as_slice()).for_each(|(o, v)| *o += alpha[l] * v);
        }
        assert!(alpha[0] > 0.01 && alpha[1] > 0.01, "{alpha:?}");
        for (a, b) in out.as_slice().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_mode_never_warps() {
        let m = zero_model(vec![face()], 2, TransformClass::Identity);
        let before = warp_call_count();
        mix_align(&textured(128, 128), &posed(&face()), &m).unwrap();
        assert_eq!(warp_call_count(), before);
        let m = zero_model(vec![face()], 2, TransformClass::Affine);
        mix_align(&textured(128, 128), &posed(&face()), &m).unwrap();
        assert_eq!(warp_call_count(), before + 2);
    }

    #[test]
    fn feature_lengths_follow_mode() {
        let plain = model_with(Vec::new(), TransformClass::Affine, FeatureMode::Plain);
        let constrained = model_with(Vec::new(), TransformClass::Affine, FeatureMode::Constrained);
        assert_eq!(plain.feature_len(), 5 * 128);
        assert_eq!(constrained.feature_len(), 5 * 128 + 10);
    }

    #[test]
    fn bbox_initialization_contract() {
        let m = zero_model(vec![face()], 1, TransformClass::Affine);
        let r = m.reference_box;
        let same = init_from_bbox(&r, &m).unwrap();
        assert!(same.diff(&face()).unwrap().iter().all(|d| d.abs() < 1e-9));

        let shifted = Rect::new(r.left + 10.0, r.top, r.right + 10.0, r.bottom).unwrap();
        let moved = init_from_bbox(&shifted, &m).unwrap();
        for (i, d) in moved.diff(&face()).unwrap().iter().enumerate() {
            let expected = if i % 2 == 0 { 10.0 } else { 0.0 };
            assert!((d - expected).abs() < 1e-9);
        }

        let [cx, cy] = r.center();
        let (hw, hh) = (r.width(), r.height());
        let doubled = Rect::new(cx - hw, cy - hh, cx + hw, cy + hh).unwrap();
        let big = init_from_bbox(&doubled, &m).unwrap();
        let ratio = big.bounding_box().larger_side() / face().bounding_box().larger_side();
        assert!((ratio - 2.0).abs() < 1e-12);

        let empty = Rect {
            left: 5.0,
            top: 5.0,
            right: 5.0,
            bottom: 9.0,
        };
        assert!(matches!(init_from_bbox(&empty, &m), Err(Error::InvalidArg(_))));
    }

    proptest::proptest! {
        #[test]
        fn gating_is_a_simplex(
            errors in proptest::collection::vec(0.0f64..1e6, 1..8),
            temperature in 1e-3f64..1e3,
        ) {
            let g = softmax_gating(&errors, temperature);
            proptest::prop_assert_eq!(g.len(), errors.len());
            proptest::prop_assert!(g.iter().all(|w| *w >= 0.0));
            proptest::prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // The smallest error always carries the largest weight.
            let best = errors.iter().copied().fold(f64::INFINITY, f64::min);
            let top = g.iter().copied().fold(0.0, f64::max);
            for (e, w) in errors.iter().zip(&g) {
                if *e == best {
                    proptest::prop_assert_eq!(*w, top);
                }
            }
        }
    }
}
