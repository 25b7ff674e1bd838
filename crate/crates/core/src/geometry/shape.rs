use crate::error::{Error, Result};

/// An ordered set of `p` landmarks stored as a flat `(x1, y1, ..., xp, yp)` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    coords: Vec<f64>,
}

impl Shape {
    /// Smallest landmark count for which an affine fit is determined.
    pub const MIN_POINTS: usize = 3;

    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() % 2 != 0 {
            return Err(Error::InvalidArg(format!(
                "shape vector has odd length {}",
                coords.len()
            )));
        }
        if coords.len() < 2 * Self::MIN_POINTS {
            return Err(Error::InvalidArg(format!(
                "shape needs at least {} points, got {}",
                Self::MIN_POINTS,
                coords.len() / 2
            )));
        }
        if let Some(i) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArg(format!(
                "non-finite coordinate at index {i}"
            )));
        }
        Ok(Self { coords })
    }

    pub fn from_points(points: &[[f64; 2]]) -> Result<Self> {
        Self::new(points.iter().flat_map(|p| [p[0], p[1]]).collect())
    }

    /// Builds a shape from coordinates the caller has already validated
    /// (produced by finite arithmetic on valid shapes).
    pub(crate) fn from_vec_unchecked(coords: Vec<f64>) -> Self {
        debug_assert!(coords.len() % 2 == 0 && coords.len() >= 2 * Self::MIN_POINTS);
        Self { coords }
    }

    pub fn num_points(&self) -> usize {
        self.coords.len() / 2
    }

    pub fn point(&self, i: usize) -> [f64; 2] {
        [self.coords[2 * i], self.coords[2 * i + 1]]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = [f64; 2]> + '_ {
        self.coords.chunks_exact(2).map(|c| [c[0], c[1]])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coords
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.num_points() as f64;
        let (sx, sy) = self
            .points()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
        [sx / n, sy / n]
    }

    /// Root-mean-square distance of the landmarks from their centroid.
    pub fn rms_radius(&self) -> f64 {
        let c = self.centroid();
        let ss: f64 = self
            .points()
            .map(|p| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2))
            .sum();
        (ss / self.num_points() as f64).sqrt()
    }

    pub fn bounding_box(&self) -> Rect {
        let mut r = Rect {
            left: f64::INFINITY,
            top: f64::INFINITY,
            right: f64::NEG_INFINITY,
            bottom: f64::NEG_INFINITY,
        };
        for [x, y] in self.points() {
            r.left = r.left.min(x);
            r.right = r.right.max(x);
            r.top = r.top.min(y);
            r.bottom = r.bottom.max(y);
        }
        r
    }

    /// Coordinate-wise difference `self - other`.
    pub fn diff(&self, other: &Shape) -> Result<Vec<f64>> {
        self.check_same_len(other)?;
        Ok(self
            .coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| a - b)
            .collect())
    }

    /// Adds a flat displacement vector to every coordinate.
    pub fn displaced(&self, delta: &[f64]) -> Result<Shape> {
        if delta.len() != self.coords.len() {
            return Err(Error::LengthMismatch {
                expected: self.coords.len(),
                found: delta.len(),
            });
        }
        Shape::new(self.coords.iter().zip(delta).map(|(a, d)| a + d).collect())
    }

    /// Mean Euclidean distance between corresponding landmarks.
    pub fn mean_point_distance(&self, other: &Shape) -> Result<f64> {
        self.check_same_len(other)?;
        let total: f64 = self
            .points()
            .zip(other.points())
            .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
            .sum();
        Ok(total / self.num_points() as f64)
    }

    pub(crate) fn check_same_len(&self, other: &Shape) -> Result<()> {
        if self.coords.len() != other.coords.len() {
            return Err(Error::LengthMismatch {
                expected: self.coords.len(),
                found: other.coords.len(),
            });
        }
        Ok(())
    }
}

/// Axis-aligned rectangle in pixel coordinates (`left <= right`, `top <= bottom`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl Rect {
    pub fn new(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self> {
        let r = Rect {
            left,
            top,
            right,
            bottom,
        };
        if ![left, top, right, bottom].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArg("non-finite rectangle coordinate".into()));
        }
        if !(r.width() > 0.0 && r.height() > 0.0) {
            return Err(Error::InvalidArg(format!(
                "empty rectangle ({left}, {top}, {right}, {bottom})"
            )));
        }
        Ok(r)
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.left + self.right),
            0.5 * (self.top + self.bottom),
        ]
    }

    pub fn larger_side(&self) -> f64 {
        self.width().max(self.height())
    }
}

/// Coordinate-wise mean of a non-empty list of equally sized shapes.
pub fn mean_shape(shapes: &[Shape]) -> Result<Shape> {
    let first = shapes
        .first()
        .ok_or_else(|| Error::InvalidArg("mean of an empty shape list".into()))?;
    let mut acc = vec![0.0; first.as_slice().len()];
    for s in shapes {
        first.check_same_len(s)?;
        for (a, v) in acc.iter_mut().zip(s.as_slice()) {
            *a += v;
        }
    }
    let n = shapes.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(Shape::from_vec_unchecked(acc))
}

/// Translates every shape so its centroid is the origin and scales it so its RMS
/// radius is one. Returns the normalized shapes and their per-landmark mean.
pub fn canonical_normalize(shapes: &[Shape]) -> Result<(Vec<Shape>, Shape)> {
    if shapes.is_empty() {
        return Err(Error::InvalidArg("no shapes to normalize".into()));
    }
    let normalized = shapes
        .iter()
        .map(normalize_one)
        .collect::<Result<Vec<_>>>()?;
    let mean = mean_shape(&normalized)?;
    Ok((normalized, mean))
}

pub(crate) fn normalize_one(s: &Shape) -> Result<Shape> {
    let c = s.centroid();
    let r = s.rms_radius();
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::DegenerateShape(
            "shape has zero RMS radius".to_string(),
        ));
    }
    let coords = s
        .points()
        .flat_map(|p| [(p[0] - c[0]) / r, (p[1] - c[1]) / r])
        .collect();
    Ok(Shape::from_vec_unchecked(coords))
}
