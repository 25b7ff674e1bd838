use nalgebra::DMatrix;

use super::shape::Shape;
use crate::error::{Error, Result};

/// Condition number of the `[x, y, 1]` design above which a landmark set is
/// treated as collinear.
pub const DEGENERACY_CONDITION: f64 = 1e12;

/// A 2-D affine map `p -> linear * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    /// Row-major 2x2 matrix.
    pub linear: [[f64; 2]; 2],
    pub translation: [f64; 2],
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineTransform {
    pub const fn identity() -> Self {
        Self {
            linear: [[1.0, 0.0], [0.0, 1.0]],
            translation: [0.0, 0.0],
        }
    }

    pub const fn translation(tx: f64, ty: f64) -> Self {
        Self {
            linear: [[1.0, 0.0], [0.0, 1.0]],
            translation: [tx, ty],
        }
    }

    pub const fn scaling(sx: f64, sy: f64) -> Self {
        Self {
            linear: [[sx, 0.0], [0.0, sy]],
            translation: [0.0, 0.0],
        }
    }

    /// Counter-clockwise rotation by `angle` radians about the origin (y axis down
    /// makes it appear clockwise on screen).
    pub fn rotation(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            linear: [[c, -s], [s, c]],
            translation: [0.0, 0.0],
        }
    }

    pub fn det(&self) -> f64 {
        let m = &self.linear;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().flatten().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
    }

    #[inline]
    pub fn apply_point(&self, p: [f64; 2]) -> [f64; 2] {
        let m = &self.linear;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + self.translation[0],
            m[1][0] * p[0] + m[1][1] * p[1] + self.translation[1],
        ]
    }

    /// Applies only the linear part, as appropriate for displacement vectors.
    #[inline]
    pub fn apply_vector(&self, v: [f64; 2]) -> [f64; 2] {
        let m = &self.linear;
        [
            m[0][0] * v[0] + m[0][1] * v[1],
            m[1][0] * v[0] + m[1][1] * v[1],
        ]
    }

    pub fn apply_to_shape(&self, s: &Shape) -> Shape {
        let coords = s
            .points()
            .flat_map(|p| self.apply_point(p))
            .collect::<Vec<_>>();
        Shape::from_vec_unchecked(coords)
    }

    /// Applies the linear part to a flat displacement vector.
    pub fn apply_to_displacement(&self, delta: &[f64]) -> Vec<f64> {
        delta
            .chunks_exact(2)
            .flat_map(|d| self.apply_vector([d[0], d[1]]))
            .collect()
    }

    /// `self ∘ first`: the map that applies `first`, then `self`.
    pub fn compose(&self, first: &AffineTransform) -> AffineTransform {
        let a = &self.linear;
        let b = &first.linear;
        let linear = [
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ];
        let t = self.apply_point(first.translation);
        AffineTransform {
            linear,
            translation: t,
        }
    }

    pub fn invert(&self) -> Result<AffineTransform> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::SingularTransform { det });
        }
        let m = &self.linear;
        let inv = [
            [m[1][1] / det, -m[0][1] / det],
            [-m[1][0] / det, m[0][0] / det],
        ];
        let t = self.translation;
        let translation = [
            -(inv[0][0] * t[0] + inv[0][1] * t[1]),
            -(inv[1][0] * t[0] + inv[1][1] * t[1]),
        ];
        Ok(AffineTransform {
            linear: inv,
            translation,
        })
    }

    /// Largest absolute difference between corresponding parameters.
    pub fn max_param_diff(&self, other: &AffineTransform) -> f64 {
        let a = self.linear.iter().flatten().chain(&self.translation);
        let b = other.linear.iter().flatten().chain(&other.translation);
        a.zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}

pub fn apply_to_shape(t: &AffineTransform, s: &Shape) -> Shape {
    t.apply_to_shape(s)
}

pub fn invert(t: &AffineTransform) -> Result<AffineTransform> {
    t.invert()
}

/// Least-squares affine map taking `src` onto `dst`.
///
/// Each output coordinate is an independent three-parameter linear regression
/// on the `[x, y, 1]` design, solved through its singular value decomposition.
pub fn fit_affine(src: &Shape, dst: &Shape) -> Result<AffineTransform> {
    fit_affine_with_residual(src, dst).map(|(t, _)| t)
}

/// Like [`fit_affine`], also returning the squared residual `‖A(src) - dst‖²`.
pub fn fit_affine_with_residual(src: &Shape, dst: &Shape) -> Result<(AffineTransform, f64)> {
    src.check_same_len(dst)?;
    let p = src.num_points();
    let design = DMatrix::from_fn(p, 3, |i, j| match j {
        0 => src.as_slice()[2 * i],
        1 => src.as_slice()[2 * i + 1],
        _ => 1.0,
    });
    let rhs = DMatrix::from_fn(p, 2, |i, j| dst.as_slice()[2 * i + j]);
    let svd = design.svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if !(smin > 0.0) || smax / smin > DEGENERACY_CONDITION {
        return Err(Error::DegenerateShape(format!(
            "landmarks are collinear (condition number {:.3e})",
            if smin > 0.0 { smax / smin } else { f64::INFINITY }
        )));
    }
    let sol = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::DegenerateShape(e.to_string()))?;
    let t = AffineTransform {
        linear: [[sol[(0, 0)], sol[(1, 0)]], [sol[(0, 1)], sol[(1, 1)]]],
        translation: [sol[(2, 0)], sol[(2, 1)]],
    };
    let residual = squared_residual(&t, src, dst);
    Ok((t, residual))
}

pub(crate) fn squared_residual(t: &AffineTransform, src: &Shape, dst: &Shape) -> f64 {
    src.points()
        .zip(dst.points())
        .map(|(s, d)| {
            let q = t.apply_point(s);
            (q[0] - d[0]).powi(2) + (q[1] - d[1]).powi(2)
        })
        .sum()
}

/// Affine-invariant misfit of `s` against `prototype`: the squared residual of
/// the best affine alignment, divided by the landmark count.
pub fn alignment_error(s: &Shape, prototype: &Shape) -> Result<f64> {
    let (_, r) = fit_affine_with_residual(s, prototype)?;
    Ok(r / s.num_points() as f64)
}
