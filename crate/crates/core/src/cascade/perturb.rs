use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{fit_affine, mean_shape, AffineTransform, Shape};

/// Leading deformation directions of a set of canonical shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    /// Canonical mean the directions are expressed around.
    pub mean: Shape,
    /// Unit-norm principal directions, largest variance first.
    pub directions: Vec<Vec<f64>>,
    /// Standard deviation of the data along each direction.
    pub std_devs: Vec<f64>,
}

impl PcaBasis {
    /// Principal directions of `canonical` (already translated and scaled to
    /// a common frame), keeping at most `modes` of them.
    pub fn from_shapes(canonical: &[Shape], modes: usize) -> Result<Self> {
        let mean = mean_shape(canonical)?;
        let dim = mean.as_slice().len();
        let n = canonical.len();
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for s in canonical {
            let d = nalgebra::DVector::from_iterator(dim, s.as_slice().iter().zip(mean.as_slice()).map(|(a, b)| a - b));
            cov.ger(1.0, &d, &d, 1.0);
        }
        cov /= n.max(2) as f64 - 1.0;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut directions = Vec::new();
        let mut std_devs = Vec::new();
        for &j in order.iter().take(modes) {
            let var = eig.eigenvalues[j];
            if !(var > 1e-14) {
                break;
            }
            let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
            // Sign convention: largest-magnitude entry positive.
            let big = v.iter().copied().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if big < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            directions.push(v);
            std_devs.push(var.sqrt());
        }
        Ok(Self {
            mean,
            directions,
            std_devs,
        })
    }

    pub fn num_modes(&self) -> usize {
        self.directions.len()
    }
}

/// Noise scales for training initializations. Lengths are fractions of the
/// ground-truth RMS radius; `pca` counts per-mode standard deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbSigmas {
    pub pca: f64,
    pub rotation_deg: f64,
    pub translation: f64,
    pub anisotropic: f64,
    pub iid: f64,
}

impl PerturbSigmas {
    pub const ZERO: Self = Self {
        pca: 0.0,
        rotation_deg: 0.0,
        translation: 0.0,
        anisotropic: 0.0,
        iid: 0.0,
    };

    /// Only independent per-coordinate noise.
    pub fn iid_only(iid: f64) -> Self {
        Self { iid, ..Self::ZERO }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.pca, self.rotation_deg, self.translation, self.anisotropic, self.iid];
        if all.iter().all(|s| s.is_finite() && *s >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArg(format!("perturbation sigmas must be finite and non-negative: {self:?}")))
        }
    }
}

fn normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        sigma * rng.sample::<f64, _>(StandardNormal)
    } else {
        0.0
    }
}

/// A random initialization around `gt`.
///
/// Deformation coefficients are drawn along the basis directions and mapped
/// into `gt`'s pose through the affine fit of the basis mean onto `gt`. The
/// deformed shape is then rotated and anisotropically scaled about its
/// centroid, translated, and jittered per coordinate. Every term is added as
/// a displacement, so zero sigmas return `gt` unchanged.
pub fn sample_perturbation(gt: &Shape, basis: &PcaBasis, sigmas: &PerturbSigmas, rng: &mut ChaCha8Rng) -> Result<Shape> {
    sigmas.validate()?;
    gt.check_same_len(&basis.mean)?;
    let radius = gt.rms_radius();
    let mut y = gt.as_slice().to_vec();

    if sigmas.pca > 0.0 && basis.num_modes() > 0 {
        let mut canonical = vec![0.0; y.len()];
        for (dir, sd) in basis.directions.iter().zip(&basis.std_devs) {
            let c = normal(rng, sigmas.pca * sd);
            canonical.iter_mut().zip(dir).for_each(|(o, d)| *o += c * d);
        }
        let pose = fit_affine(&basis.mean, gt)?;
        y.iter_mut()
            .zip(pose.apply_to_displacement(&canonical))
            .for_each(|(v, d)| *v += d);
    }

    let angle = normal(rng, sigmas.rotation_deg).to_radians();
    let sx = normal(rng, sigmas.anisotropic);
    let sy = normal(rng, sigmas.anisotropic);
    let tx = normal(rng, sigmas.translation) * radius;
    let ty = normal(rng, sigmas.translation) * radius;
    let rs = AffineTransform::rotation(angle).compose(&AffineTransform::scaling(1.0 + sx, 1.0 + sy));
    let l = rs.linear;
    let deformed = Shape::new(y.clone())?;
    let [cx, cy] = deformed.centroid();
    for (i, [px, py]) in deformed.points().enumerate() {
        let (dx, dy) = (px - cx, py - cy);
        y[2 * i] += (l[0][0] - 1.0) * dx + l[0][1] * dy + tx + normal(rng, sigmas.iid) * radius;
        y[2 * i + 1] += l[1][0] * dx + (l[1][1] - 1.0) * dy + ty + normal(rng, sigmas.iid) * radius;
    }
    Shape::new(y)
}
