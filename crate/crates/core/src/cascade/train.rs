use faer::MatRef;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::align::{apply_update, frame_features_into, gate, FeatureConfig};
use super::model::{Expert, FeatureMode, MixModel};
use super::perturb::{sample_perturbation, PcaBasis, PerturbSigmas};
use crate::clustering::{cluster_shapes, ClusterResult, ConstraintGroup, ShapeConstraints, TransformClass};
use crate::error::{Error, Result};
use crate::features::DescriptorParams;
use crate::geometry::{canonical_normalize, AffineTransform, GrayImage, Rect, Shape};
use crate::regression::{default_gamma_grid, fit_design_cv, retained_indices, Design, RegressionStage};
use crate::synth::instance_rng;

/// Gating weights below this are dropped during training so experts only
/// fit samples they materially contribute to.
const PRUNE_WEIGHT: f64 = 1e-6;
/// Minimum weighted rows an expert needs to fit a stage; below it the expert
/// keeps the estimate unchanged for that stage.
const MIN_ROWS: usize = 4;

/// The ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// One expert, no alignment to a prototype.
    Sdm,
    /// One expert regressing in its prototype frame.
    TiSdm,
    /// Several gated experts, each in its own prototype frame.
    Mix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub transform: TransformClass,
    pub num_experts: usize,
    pub feature_mode: FeatureMode,
    pub descriptor: DescriptorParams,
    /// Constraint weight in canonical units.
    pub lambda: f64,
    pub temperature: f64,
    /// Initializations drawn per training image.
    pub perturbations: usize,
    pub max_stages: usize,
    pub fine_stages: usize,
    pub pca_modes: usize,
    pub sigmas: PerturbSigmas,
    /// Per-coordinate noise for the fine cascade, as a fraction of the face radius.
    pub fine_sigma: f64,
    pub trim_fraction: f64,
    pub gamma_grid: Vec<f64>,
    pub cluster_iters: usize,
    /// A new stage is kept only if its CV error is at most this fraction of
    /// the previous stage's.
    pub stop_ratio: f64,
    pub seed: u64,
    /// Landmark groups whose mean prototype position is pinned; empty pins
    /// three well-spread landmarks instead.
    pub constraint_groups: Vec<ConstraintGroup>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            transform: TransformClass::Affine,
            num_experts: 3,
            feature_mode: FeatureMode::Constrained,
            descriptor: DescriptorParams::default(),
            lambda: 1.0,
            temperature: 1.0,
            perturbations: 15,
            max_stages: 4,
            fine_stages: 1,
            pca_modes: 6,
            sigmas: PerturbSigmas {
                pca: 2.0,
                rotation_deg: 10.0,
                translation: 0.08,
                anisotropic: 0.05,
                iid: 0.02,
            },
            fine_sigma: 0.05,
            trim_fraction: 0.05,
            gamma_grid: default_gamma_grid(),
            cluster_iters: 50,
            stop_ratio: 0.995,
            seed: 0,
            constraint_groups: Vec::new(),
        }
    }
}

impl TrainConfig {
    /// Switches to one of the ablation variants. `constrained` selects the
    /// feature mode; the expert count is kept for `Mode::Mix`.
    pub fn apply_mode(&mut self, mode: Mode, constrained: bool) {
        self.feature_mode = if constrained {
            FeatureMode::Constrained
        } else {
            FeatureMode::Plain
        };
        match mode {
            Mode::Sdm => {
                self.transform = TransformClass::Identity;
                self.num_experts = 1;
            }
            Mode::TiSdm => {
                self.transform = TransformClass::Affine;
                self.num_experts = 1;
            }
            Mode::Mix => self.transform = TransformClass::Affine,
        }
    }

    pub fn with_mode(mut self, mode: Mode, constrained: bool) -> Self {
        self.apply_mode(mode, constrained);
        self
    }

    /// Experts actually trained: identity transforms admit only one.
    pub fn effective_experts(&self) -> usize {
        match self.transform {
            TransformClass::Identity => 1,
            TransformClass::Affine => self.num_experts,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.descriptor.validate()?;
        self.sigmas.validate()?;
        let bad = |msg: String| Err(Error::InvalidArg(msg));
        if self.num_experts < 1 {
            return bad("num_experts must be at least 1".into());
        }
        if self.perturbations < 1 {
            return bad("perturbations must be at least 1".into());
        }
        if self.max_stages < 1 {
            return bad("max_stages must be at least 1".into());
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.fine_sigma.is_finite() && self.fine_sigma >= 0.0) {
            return bad(format!("fine_sigma must be finite and non-negative, got {}", self.fine_sigma));
        }
        if !(0.0..1.0).contains(&self.trim_fraction) {
            return bad(format!("trim_fraction must lie in [0, 1), got {}", self.trim_fraction));
        }
        if self.gamma_grid.is_empty() || self.gamma_grid.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return bad("gamma_grid must be a non-empty list of non-negative numbers".into());
        }
        if !(self.stop_ratio.is_finite() && self.stop_ratio > 0.0) {
            return bad(format!("stop_ratio must be positive, got {}", self.stop_ratio));
        }
        Ok(())
    }
}

/// An annotated training image.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub image: GrayImage,
    pub shape: Shape,
    /// Detector box, used to calibrate bounding-box initialization.
    pub bbox: Option<Rect>,
}

/// Diagnostics gathered while training.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Clustering run that produced the prototypes, when one was needed.
    pub cluster: Option<ClusterResult>,
    /// Cross-validation error of each kept main-cascade stage.
    pub cv_errors: Vec<f64>,
    /// CV error of the first main stage that was rejected by the stopping rule.
    pub rejected_cv: Option<f64>,
    pub fine_cv_errors: Vec<f64>,
    /// Selected regularization per kept stage (main then fine), per expert.
    pub gammas: Vec<Vec<f64>>,
    /// Training initializations still in use after each kept stage.
    pub retained: Vec<usize>,
}

pub fn train(samples: &[TrainingSample], cfg: &TrainConfig) -> Result<MixModel> {
    train_with_report(samples, cfg).map(|(m, _)| m)
}

fn scaled(s: &Shape, k: f64) -> Shape {
    Shape::from_vec_unchecked(s.as_slice().iter().map(|v| v * k).collect())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean detector box expressed in each face's canonical frame, scaled to the
/// prototype frame. Falls back to the mean shape's own bounding box.
fn reference_box(samples: &[TrainingSample], mean_shape: &Shape, frame_scale: f64) -> Result<Rect> {
    let mut acc = [0.0; 4];
    let mut n = 0usize;
    for s in samples {
        let Some(b) = s.bbox else { continue };
        let [cx, cy] = s.shape.centroid();
        let k = frame_scale / s.shape.rms_radius();
        acc[0] += (b.left - cx) * k;
        acc[1] += (b.top - cy) * k;
        acc[2] += (b.right - cx) * k;
        acc[3] += (b.bottom - cy) * k;
        n += 1;
    }
    if n == 0 {
        return Ok(mean_shape.bounding_box());
    }
    let m = n as f64;
    Rect::new(acc[0] / m, acc[1] / m, acc[2] / m, acc[3] / m)
}

/// One training initialization being pushed through the cascade.
struct Track {
    sample: usize,
    x: Shape,
}

fn initial_tracks(
    samples: &[TrainingSample],
    basis: &PcaBasis,
    sigmas: &PerturbSigmas,
    per_image: usize,
    seed: u64,
) -> Result<Vec<Track>> {
    (0..samples.len() * per_image)
        .into_par_iter()
        .map(|t| {
            let sample = t / per_image;
            let mut rng: ChaCha8Rng = instance_rng(seed, t as u64);
            let x = sample_perturbation(&samples[sample].shape, basis, sigmas, &mut rng)?;
            Ok(Track { sample, x })
        })
        .collect()
}

/// Per-row frame data kept between fitting and applying an expert's stage.
struct FrameRow {
    alignment: AffineTransform,
    framed: Shape,
}

struct StageFit {
    stages: Vec<RegressionStage>,
    cv_error: f64,
    next: Vec<Option<Shape>>,
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Fits one stage for every expert on the current estimates and returns the
/// gated update of each track (`None` for tracks whose estimate could not be
/// processed).
fn fit_stage(
    samples: &[TrainingSample],
    tracks: &[Track],
    model: &MixModel,
    cfg: &TrainConfig,
    stage_index: usize,
) -> Result<StageFit> {
    let fc = FeatureConfig::of(model);
    let p = model.num_points();
    let f = fc.feature_len(p);
    let t = 2 * p;
    let protos: Vec<&Shape> = model.experts.iter().map(|e| &e.prototype).collect();

    let alphas: Vec<Option<Vec<f64>>> = tracks
        .par_iter()
        .map(|tr| {
            gate(&tr.x, &protos, model.temperature).ok().map(|mut a| {
                a.iter_mut().for_each(|v| {
                    if *v < PRUNE_WEIGHT {
                        *v = 0.0
                    }
                });
                let total: f64 = a.iter().sum();
                a.iter_mut().for_each(|v| *v /= total);
                a
            })
        })
        .collect();

    let mut acc: Vec<Option<Vec<f64>>> = alphas.iter().map(|a| a.as_ref().map(|_| vec![0.0; t])).collect();
    let mut stages = Vec::with_capacity(protos.len());
    let (mut cv_sum, mut weight_sum) = (0.0, 0.0);
    for (l, proto) in protos.iter().enumerate() {
        let rows: Vec<usize> = (0..tracks.len())
            .filter(|&i| alphas[i].as_ref().is_some_and(|a| a[l] > 0.0))
            .collect();
        let mut feats = vec![0.0; rows.len() * f];
        let mut targets = vec![0.0; rows.len() * t];
        let frames: Vec<Option<FrameRow>> = feats
            .par_chunks_mut(f)
            .zip(targets.par_chunks_mut(t))
            .zip(rows.par_iter())
            .map(|((phi, target), &i)| {
                let tr = &tracks[i];
                let sample = &samples[tr.sample];
                let (alignment, framed) = frame_features_into(&sample.image, &tr.x, proto, &fc, phi).ok()?;
                let gt = alignment.apply_to_shape(&sample.shape);
                target
                    .iter_mut()
                    .zip(gt.as_slice().iter().zip(framed.as_slice()))
                    .for_each(|(o, (g, x))| *o = g - x);
                Some(FrameRow { alignment, framed })
            })
            .collect();
        let weights: Vec<f64> = rows
            .iter()
            .zip(&frames)
            .map(|(&i, fr)| if fr.is_some() { alphas[i].as_ref().unwrap()[l] } else { 0.0 })
            .collect();
        for (&i, fr) in rows.iter().zip(&frames) {
            if fr.is_none() {
                acc[i] = None;
            }
        }

        let active = weights.iter().filter(|w| **w > 0.0).count();
        let fit = if active >= MIN_ROWS {
            let design = Design {
                features: MatRef::from_row_major_slice(&feats, rows.len(), f),
                targets: MatRef::from_row_major_slice(&targets, rows.len(), t),
                weights: &weights,
            };
            let fit = fit_design_cv(&design, &cfg.gamma_grid, mix_seed(cfg.seed, stage_index as u64 + 1, l as u64 + 1))?;
            let w: f64 = weights.iter().sum();
            cv_sum += fit.cv_error * w;
            weight_sum += w;
            Some(fit)
        } else {
            None
        };
        let zero = RegressionStage::zeros(t, f);
        // Training estimates advance with out-of-fold predictions so later
        // stages see residuals typical of unseen images rather than of
        // samples the stage has already fitted.
        let updates: Vec<Option<Shape>> = feats
            .par_chunks(f)
            .zip(frames.par_iter())
            .enumerate()
            .map(|(r, (phi, fr))| {
                let fr = fr.as_ref()?;
                let stage = fit.as_ref().map_or(&zero, |fit| fit.out_of_fold(r));
                let delta = stage.predict(phi).ok()?;
                apply_update(&fr.alignment, &fr.framed, &delta, fc.transform).ok()
            })
            .collect();
        let mut stage = fit.map_or(zero.clone(), |fit| fit.stage);
        stage.lambda_used = model.lambda;
        for ((&i, u), w) in rows.iter().zip(updates).zip(&weights) {
            match (u, acc[i].as_mut()) {
                (Some(u), Some(a)) => a.iter_mut().zip(u.as_slice()).for_each(|(a, v)| *a += w * v),
                _ => acc[i] = None,
            }
        }
        stages.push(stage);
    }
    let next = acc
        .into_iter()
        .map(|a| a.and_then(|v| Shape::new(v).ok()))
        .collect();
    let cv_error = if weight_sum > 0.0 { cv_sum / weight_sum } else { f64::INFINITY };
    Ok(StageFit { stages, cv_error, next })
}

/// Grows every expert's cascade by up to `max_stages` stages trained from
/// `tracks`. With `early_stop`, a stage whose CV error is not below
/// `stop_ratio` times the previous one is discarded and training ends.
fn grow_cascade(
    samples: &[TrainingSample],
    mut tracks: Vec<Track>,
    model: &mut MixModel,
    cfg: &TrainConfig,
    max_stages: usize,
    early_stop: bool,
    report: &mut TrainReport,
    cv_log: fn(&mut TrainReport) -> &mut Vec<f64>,
) -> Result<()> {
    let mut previous: Option<f64> = None;
    for _ in 0..max_stages {
        if tracks.len() < MIN_ROWS {
            return Err(Error::InsufficientData(format!(
                "only {} training initializations remain",
                tracks.len()
            )));
        }
        let stage_index = model.num_stages();
        let fit = fit_stage(samples, &tracks, model, cfg, stage_index)?;
        if early_stop {
            if let Some(prev) = previous {
                if !(fit.cv_error <= cfg.stop_ratio * prev) {
                    report.rejected_cv = Some(fit.cv_error);
                    break;
                }
            }
        }
        previous = Some(fit.cv_error);
        cv_log(report).push(fit.cv_error);
        report.gammas.push(fit.stages.iter().map(|s| s.gamma_used).collect());
        for (e, s) in model.experts.iter_mut().zip(fit.stages) {
            e.stages.push(s);
        }

        let moved: Vec<Track> = tracks
            .iter()
            .zip(fit.next)
            .filter_map(|(tr, x)| x.map(|x| Track { sample: tr.sample, x }))
            .collect();
        let residuals: Vec<f64> = moved
            .iter()
            .map(|tr| {
                let gt = &samples[tr.sample].shape;
                tr.x.mean_point_distance(gt).map(|d| d / gt.rms_radius()).unwrap_or(f64::INFINITY)
            })
            .collect();
        let finite: Vec<f64> = residuals.iter().map(|r| if r.is_finite() { *r } else { f64::MAX }).collect();
        let keep = retained_indices(&finite, cfg.trim_fraction)?;
        let mut moved: Vec<Option<Track>> = moved.into_iter().map(Some).collect();
        tracks = keep.into_iter().filter_map(|i| moved[i].take()).collect();
        report.retained.push(tracks.len());
    }
    Ok(())
}

/// Trains a mixture of cascades and returns it with training diagnostics.
///
/// Prototypes come from affine-invariant clustering of the canonical
/// training shapes. Training initializations are random perturbations of
/// the ground truth; every stage re-gates each initialization against the
/// prototypes, fits one weighted ridge stage per expert in that expert's
/// frame, and moves the initialization by the gated combination of the
/// expert updates. A short fine cascade trained on small per-coordinate
/// perturbations is appended.
pub fn train_with_report(samples: &[TrainingSample], cfg: &TrainConfig) -> Result<(MixModel, TrainReport)> {
    cfg.validate()?;
    let l = cfg.effective_experts();
    let needed = (5 * l).max(4);
    if samples.len() < needed {
        return Err(Error::InsufficientData(format!(
            "training needs at least {needed} images for {l} experts, got {}",
            samples.len()
        )));
    }
    let shapes: Vec<Shape> = samples.iter().map(|s| s.shape.clone()).collect();
    for s in &shapes[1..] {
        shapes[0].check_same_len(s)?;
    }
    let (canonical, mean) = canonical_normalize(&shapes)?;
    let frame_scale = median(shapes.iter().map(Shape::rms_radius).collect());

    let mut report = TrainReport::default();
    let prototypes = if l == 1 {
        vec![mean.clone()]
    } else {
        let constraints = if cfg.constraint_groups.is_empty() {
            ShapeConstraints::anchor_points(&mean)?
        } else {
            ShapeConstraints::from_groups(&cfg.constraint_groups, &mean)?
        };
        let result = cluster_shapes(&canonical, l, TransformClass::Affine, &constraints, cfg.seed, cfg.cluster_iters)?;
        let protos = result.prototypes.clone();
        report.cluster = Some(result);
        protos
    };
    let mean_shape = scaled(&mean, frame_scale);
    let reference_box = reference_box(samples, &mean_shape, frame_scale)?;
    let basis = PcaBasis::from_shapes(&canonical, cfg.pca_modes)?;

    let mut model = MixModel {
        experts: prototypes
            .iter()
            .map(|p| Expert {
                prototype: scaled(p, frame_scale),
                stages: Vec::new(),
            })
            .collect(),
        descriptor: cfg.descriptor,
        feature_mode: cfg.feature_mode,
        transform: cfg.transform,
        lambda: cfg.lambda,
        temperature: cfg.temperature,
        frame_scale,
        mean_shape,
        reference_box,
        config_echo: crate::io::config_to_string(cfg),
    };

    let tracks = initial_tracks(samples, &basis, &cfg.sigmas, cfg.perturbations, mix_seed(cfg.seed, 1, 0))?;
    grow_cascade(samples, tracks, &mut model, cfg, cfg.max_stages, true, &mut report, |r| &mut r.cv_errors)?;
    if cfg.fine_stages > 0 {
        let fine = PerturbSigmas::iid_only(cfg.fine_sigma);
        let tracks = initial_tracks(samples, &basis, &fine, cfg.perturbations, mix_seed(cfg.seed, 2, 0))?;
        grow_cascade(samples, tracks, &mut model, cfg, cfg.fine_stages, false, &mut report, |r| &mut r.fine_cv_errors)?;
    }
    model.validate()?;
    Ok((model, report))
}
