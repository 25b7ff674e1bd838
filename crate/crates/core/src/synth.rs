//! Synthetic deformable "faces" with known landmarks.
//!
//! A face is a base layout of landmarks (in face units, inter-ocular distance
//! 1) plus one of a few discrete expression presets plus Gaussian
//! deformation along orthonormal modes, placed in the image by a random
//! affine pose. Each landmark is drawn as a striped blob whose stripe
//! orientation depends on the landmark index, so local gradient descriptors
//! identify it; a soft face oval and pixel noise complete the picture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};

use crate::clustering::ConstraintGroup;
use crate::error::{Error, Result};
use crate::geometry::{AffineTransform, GrayImage, Rect, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct RenderParams {
    /// Blob standard deviation, face units.
    pub blob_sigma: f64,
    pub blob_contrast: f64,
    /// Stripe period, face units.
    pub stripe_period: f64,
    pub background: f64,
    pub face_contrast: f64,
    pub noise_sigma: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            blob_sigma: 0.07,
            blob_contrast: 0.55,
            stripe_period: 0.09,
            background: 0.15,
            face_contrast: 0.2,
            noise_sigma: 0.08,
        }
    }
}

/// Distribution of the face-to-image transform.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseParams {
    /// Pixels per face unit before jitter.
    pub scale: f64,
    /// Uniform relative scale range.
    pub scale_range: (f64, f64),
    pub max_rotation_deg: f64,
    /// Uniform relative x/y scale disagreement.
    pub anisotropy: f64,
    /// Uniform translation jitter in pixels.
    pub max_translation: f64,
    /// Image position of the face origin.
    pub center: [f64; 2],
}

impl PoseParams {
    /// Face units map to pixels unchanged.
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            scale_range: (1.0, 1.0),
            max_rotation_deg: 0.0,
            anisotropy: 0.0,
            max_translation: 0.0,
            center: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthModel {
    pub base_shape: Shape,
    /// Orthonormal deformation directions.
    pub modes: Vec<Vec<f64>>,
    pub mode_sigmas: Vec<f64>,
    /// Expression offsets; preset 0 is neutral.
    pub presets: Vec<Vec<f64>>,
    pub render: RenderParams,
    pub pose: PoseParams,
    pub image_width: usize,
    pub image_height: usize,
    /// Relative bbox jitter (uniform, fraction of box size).
    pub bbox_jitter: f64,
}

#[derive(Debug, Clone)]
pub struct SynthInstance {
    pub image: GrayImage,
    pub shape: Shape,
    pub bbox: Rect,
    pub preset: usize,
}

const LEFT_EYE: [usize; 3] = [6, 7, 8];
const RIGHT_EYE: [usize; 3] = [9, 10, 11];
const MOUTH: [usize; 4] = [14, 15, 16, 17];

fn base_layout(p: usize) -> Vec<[f64; 2]> {
    let eye = |cx: f64, sign: f64| {
        // Three points on an ellipse at 120° spacing: their mean is the centre.
        let (rx, ry) = (0.18, 0.08);
        [0.0f64, 120.0, 240.0].map(|deg| {
            let t = deg.to_radians();
            [cx + sign * rx * t.cos(), -0.2 + ry * t.sin()]
        })
    };
    let mut pts = vec![
        [-0.78, -0.45],
        [-0.52, -0.56],
        [-0.26, -0.48],
        [0.26, -0.48],
        [0.52, -0.56],
        [0.78, -0.45],
    ];
    pts.extend(eye(-0.5, -1.0));
    pts.extend(eye(0.5, 1.0));
    pts.extend([[0.0, 0.02], [0.0, 0.3]]);
    pts.extend([[-0.34, 0.64], [0.0, 0.56], [0.34, 0.64], [0.0, 0.76]]);
    pts.extend([[-0.88, 0.35], [0.88, 0.35]]);
    // Extra landmarks go on the chin arc between the jaw points.
    let extra = p - pts.len();
    for k in 0..extra {
        let t = std::f64::consts::PI * (k as f64 + 1.0) / (extra as f64 + 1.0);
        pts.push([-0.88 * t.cos(), 0.35 + 0.7 * t.sin()]);
    }
    pts
}

fn preset_offsets(base: &[[f64; 2]], g: usize) -> Vec<Vec<f64>> {
    let p = base.len();
    let mut all = Vec::new();
    all.push(vec![0.0; 2 * p]);
    // Mouth open: lower lip and chin drop.
    let mut v = vec![0.0; 2 * p];
    v[2 * 17 + 1] = 0.3;
    v[2 * 15 + 1] = -0.04;
    v[2 * 14] = 0.05;
    v[2 * 16] = -0.05;
    v[2 * 14 + 1] = 0.06;
    v[2 * 16 + 1] = 0.06;
    for i in 20..p {
        v[2 * i + 1] = 0.12;
    }
    all.push(v);
    // Raised brows with a wide smile.
    let mut v = vec![0.0; 2 * p];
    for i in 0..6 {
        v[2 * i + 1] = -0.16;
    }
    v[2 * 14] = -0.1;
    v[2 * 14 + 1] = -0.12;
    v[2 * 16] = 0.1;
    v[2 * 16 + 1] = -0.12;
    all.push(v);
    // Head turn: a depth-dependent horizontal shift, not an affine map.
    let mut v = vec![0.0; 2 * p];
    for (i, q) in base.iter().enumerate() {
        let depth = 1.0 - (q[0] / 0.9).powi(2);
        v[2 * i] = 0.22 * depth;
    }
    all.push(v);
    // Frown: brows drop and pinch, mouth corners fall.
    let mut v = vec![0.0; 2 * p];
    for (i, dx) in [(0, 0.0), (1, 0.02), (2, 0.08), (3, -0.08), (4, -0.02), (5, 0.0)] {
        v[2 * i] = dx;
        v[2 * i + 1] = 0.1;
    }
    v[2 * 14 + 1] = 0.12;
    v[2 * 16 + 1] = 0.12;
    all.push(v);
    all.truncate(g);
    // Strong enough that one shared regressor struggles to cover every preset.
    for v in &mut all {
        v.iter_mut().for_each(|x| *x *= 1.5);
    }
    all
}

fn deformation_modes(base: &[[f64; 2]]) -> Vec<Vec<f64>> {
    let p = base.len();
    let raw: Vec<Vec<f64>> = vec![
        // Eye spacing.
        base.iter().enumerate().flat_map(|(i, _)| {
            let dx = if LEFT_EYE.contains(&i) { -1.0 } else if RIGHT_EYE.contains(&i) { 1.0 } else { 0.0 };
            [dx, 0.0]
        }).collect(),
        // Mouth width.
        (0..p).flat_map(|i| [if i == 14 { -1.0 } else if i == 16 { 1.0 } else { 0.0 }, 0.0]).collect(),
        // Brow arch.
        (0..p).flat_map(|i| [0.0, if i == 1 || i == 4 { -1.0 } else if i < 6 { 0.4 } else { 0.0 }]).collect(),
        // Nose length and lip thickness.
        (0..p).flat_map(|i| [0.0, match i { 13 => 1.0, 15 => -0.5, 17 => 0.5, _ => 0.0 }]).collect(),
    ];
    let mut modes: Vec<Vec<f64>> = Vec::new();
    for mut v in raw {
        for m in &modes {
            let d: f64 = v.iter().zip(m).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(m).for_each(|(a, b)| *a -= d * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= n);
        modes.push(v);
    }
    modes
}

impl SynthModel {
    /// Default 20-landmark layout needs at least this many points.
    pub const MIN_POINTS: usize = 20;
    pub const MAX_PRESETS: usize = 5;

    pub fn new(p: usize, g: usize) -> Result<Self> {
        if p < Self::MIN_POINTS {
            return Err(Error::InvalidArg(format!(
                "synthetic faces need at least {} landmarks, got {p}",
                Self::MIN_POINTS
            )));
        }
        if !(1..=Self::MAX_PRESETS).contains(&g) {
            return Err(Error::InvalidArg(format!(
                "preset count must be in 1..={}, got {g}",
                Self::MAX_PRESETS
            )));
        }
        let base = base_layout(p);
        let modes = deformation_modes(&base);
        Ok(Self {
            base_shape: Shape::from_points(&base)?,
            mode_sigmas: vec![0.025; modes.len()],
            modes,
            presets: preset_offsets(&base, g),
            render: RenderParams::default(),
            pose: PoseParams {
                scale: 64.0,
                scale_range: (0.9, 1.15),
                max_rotation_deg: 35.0,
                anisotropy: 0.05,
                max_translation: 8.0,
                center: [92.0, 84.0],
            },
            image_width: 184,
            image_height: 184,
            bbox_jitter: 0.05,
        })
    }

    pub fn num_points(&self) -> usize {
        self.base_shape.num_points()
    }

    pub fn num_presets(&self) -> usize {
        self.presets.len()
    }

    /// Landmarks whose mean is the left pupil.
    pub fn left_pupil(&self) -> Vec<usize> {
        LEFT_EYE.to_vec()
    }

    pub fn right_pupil(&self) -> Vec<usize> {
        RIGHT_EYE.to_vec()
    }

    /// Left brow, right brow and mouth, each pinned in both axes.
    pub fn constraint_groups(&self) -> Vec<ConstraintGroup> {
        [vec![0, 1, 2], vec![3, 4, 5], MOUTH.to_vec()]
            .into_iter()
            .map(|indices| ConstraintGroup {
                indices,
                pin_x: true,
                pin_y: true,
            })
            .collect()
    }

    /// Same layout with no shape variation, pose jitter, or noise.
    pub fn without_variation(mut self) -> Self {
        self.mode_sigmas.iter_mut().for_each(|s| *s = 0.0);
        self.render.noise_sigma = 0.0;
        self.bbox_jitter = 0.0;
        self.pose = PoseParams {
            center: self.pose.center,
            scale: self.pose.scale,
            ..PoseParams::identity()
        };
        self
    }

    fn validate(&self) -> Result<()> {
        let dim = self.base_shape.as_slice().len();
        if self.modes.len() != self.mode_sigmas.len() {
            return Err(Error::LengthMismatch {
                expected: self.modes.len(),
                found: self.mode_sigmas.len(),
            });
        }
        if self.presets.is_empty() {
            return Err(Error::InvalidArg("synthetic model without presets".into()));
        }
        for v in self.modes.iter().chain(&self.presets) {
            if v.len() != dim {
                return Err(Error::LengthMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::InvalidArg("empty image size".into()));
        }
        Ok(())
    }
}

/// Independent random stream for instance `index` of a run seeded with `seed`.
pub fn instance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn sample_pose(pose: &PoseParams, rng: &mut ChaCha8Rng) -> AffineTransform {
    let uniform = |rng: &mut ChaCha8Rng, half: f64| if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 };
    let (lo, hi) = pose.scale_range;
    let s = pose.scale * if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let angle = uniform(rng, pose.max_rotation_deg).to_radians();
    let aniso = uniform(rng, pose.anisotropy);
    let tx = uniform(rng, pose.max_translation);
    let ty = uniform(rng, pose.max_translation);
    AffineTransform::translation(pose.center[0] + tx, pose.center[1] + ty)
        .compose(&AffineTransform::rotation(angle))
        .compose(&AffineTransform::scaling(s * (1.0 + aniso), s * (1.0 - aniso)))
}

/// Draws one face with a uniformly chosen preset.
pub fn sample_instance(model: &SynthModel, rng: &mut ChaCha8Rng) -> Result<SynthInstance> {
    let preset = rng.random_range(0..model.presets.len());
    sample_instance_with_preset(model, preset, rng)
}

pub fn sample_instance_with_preset(model: &SynthModel, preset: usize, rng: &mut ChaCha8Rng) -> Result<SynthInstance> {
    model.validate()?;
    if preset >= model.presets.len() {
        return Err(Error::InvalidArg(format!("preset {preset} out of range")));
    }
    let mut face: Vec<f64> = model.base_shape.as_slice().to_vec();
    for (f, o) in face.iter_mut().zip(&model.presets[preset]) {
        *f += o;
    }
    for (mode, &sigma) in model.modes.iter().zip(&model.mode_sigmas) {
        if sigma > 0.0 {
            let c: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
            face.iter_mut().zip(mode).for_each(|(f, m)| *f += c * m);
        }
    }
    let face = Shape::new(face)?;
    let pose = sample_pose(&model.pose, rng);
    let shape = pose.apply_to_shape(&face);
    let image = render(model, &face, &pose, rng)?;

    let tight = shape.bounding_box();
    let (w, h) = (tight.width() * 1.2, tight.height() * 1.2);
    let [cx, cy] = tight.center();
    let j = model.bbox_jitter;
    let mut jitter = |half: f64| if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 };
    let (cx, cy) = (cx + jitter(j) * w, cy + jitter(j) * h);
    let size = 1.0 + jitter(j);
    let bbox = Rect::new(
        cx - 0.5 * w * size,
        cy - 0.5 * h * size,
        cx + 0.5 * w * size,
        cy + 0.5 * h * size,
    )?;
    Ok(SynthInstance {
        image,
        shape,
        bbox,
        preset,
    })
}

/// Renders `face` (face units) through `pose` into a new image.
pub fn render(model: &SynthModel, face: &Shape, pose: &AffineTransform, rng: &mut ChaCha8Rng) -> Result<GrayImage> {
    let rp = &model.render;
    let (w, h) = (model.image_width, model.image_height);
    let inv = pose.invert()?;
    let to_face = |x: usize, y: usize| inv.apply_point([x as f64, y as f64]);
    let mut pix = vec![0f64; w * h];

    // Soft face oval.
    for y in 0..h {
        for x in 0..w {
            let [u, v] = to_face(x, y);
            let r = ((u / 1.0).powi(2) + ((v - 0.2) / 1.1).powi(2)).sqrt();
            let inside = 1.0 / (1.0 + ((r - 1.0) / 0.03).exp());
            pix[y * w + x] = rp.background + rp.face_contrast * inside;
        }
    }

    // Landmark blobs, evaluated only where they are non-negligible.
    let reach = 4.0 * rp.blob_sigma;
    let corners = [[-reach, -reach], [reach, -reach], [-reach, reach], [reach, reach]];
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    for (i, c) in face.points().enumerate() {
        let theta = std::f64::consts::PI * ((i as f64 * golden) % 1.0);
        let dir = [theta.cos(), theta.sin()];
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for k in corners {
            let q = pose.apply_point([c[0] + k[0], c[1] + k[1]]);
            for a in 0..2 {
                lo[a] = lo[a].min(q[a]);
                hi[a] = hi[a].max(q[a]);
            }
        }
        let x0 = lo[0].floor().max(0.0) as usize;
        let y0 = lo[1].floor().max(0.0) as usize;
        let x1 = (hi[0].ceil().max(-1.0) as i64 + 1).clamp(0, w as i64) as usize;
        let y1 = (hi[1].ceil().max(-1.0) as i64 + 1).clamp(0, h as i64) as usize;
        for y in y0..y1 {
            for x in x0..x1 {
                let [u, v] = to_face(x, y);
                let (du, dv) = (u - c[0], v - c[1]);
                let d2 = du * du + dv * dv;
                if d2 > reach * reach {
                    continue;
                }
                let envelope = (-d2 / (2.0 * rp.blob_sigma * rp.blob_sigma)).exp();
                let phase = std::f64::consts::TAU * (du * dir[0] + dv * dir[1]) / rp.stripe_period;
                pix[y * w + x] += rp.blob_contrast * envelope * (0.6 + 0.4 * phase.cos());
            }
        }
    }

    let noise = Normal::new(0.0, rp.noise_sigma.max(0.0)).map_err(|e| Error::InvalidArg(e.to_string()))?;
    let pixels = pix
        .into_iter()
        .map(|v| {
            let n = if rp.noise_sigma > 0.0 { rng.sample(noise) } else { 0.0 };
            (v + n).clamp(0.0, 1.0) as f32
        })
        .collect();
    GrayImage::new(w, h, pixels)
}

/// Draws `n` instances; instance `i` uses stream `i` of `seed`.
pub fn sample_many(model: &SynthModel, n: usize, seed: u64) -> Result<Vec<SynthInstance>> {
    use rayon::prelude::*;
    (0..n)
        .into_par_iter()
        .map(|i| sample_instance(model, &mut instance_rng(seed, i as u64)))
        .collect()
}
