//! Affine-invariant shape clustering.
//!
//! Shapes are grouped by their residual after the best affine alignment to a
//! prototype, rather than by raw Euclidean distance. Prototypes are solved
//! under linear equality constraints `C x = m`; without them the problem has
//! the trivial solution where the prototype collapses to a point.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{fit_affine_with_residual, Shape, DEGENERACY_CONDITION};

/// Which transforms are factored out before comparing shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransformClass {
    /// Plain Euclidean comparison; prototypes are member means and
    /// constraints are ignored.
    Identity,
    #[default]
    Affine,
}

/// A set of landmarks whose mean position is pinned.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintGroup {
    pub indices: Vec<usize>,
    pub pin_x: bool,
    pub pin_y: bool,
}

/// Linear equality constraints `C x = m` on a flattened prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeConstraints {
    /// Row-major `c x dim`.
    matrix: Vec<f64>,
    targets: Vec<f64>,
    dim: usize,
}

impl ShapeConstraints {
    pub fn new(matrix: Vec<f64>, targets: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::InvalidArg(format!("constraint dimension {dim} is not a shape length")));
        }
        if matrix.len() != targets.len() * dim {
            return Err(Error::LengthMismatch {
                expected: targets.len() * dim,
                found: matrix.len(),
            });
        }
        if targets.len() > dim {
            return Err(Error::InvalidArg(format!(
                "{} constraints exceed the {dim} prototype coordinates",
                targets.len()
            )));
        }
        if !matrix.iter().chain(&targets).all(|v| v.is_finite()) {
            return Err(Error::InvalidArg("non-finite constraint entry".into()));
        }
        Ok(Self {
            matrix,
            targets,
            dim,
        })
    }

    pub fn unconstrained(dim: usize) -> Self {
        Self {
            matrix: Vec::new(),
            targets: Vec::new(),
            dim,
        }
    }

    /// One row per pinned axis of each group: the group's mean coordinate must
    /// equal that of `reference`.
    pub fn from_groups(groups: &[ConstraintGroup], reference: &Shape) -> Result<Self> {
        let p = reference.num_points();
        let dim = 2 * p;
        let mut matrix = Vec::new();
        let mut targets = Vec::new();
        for g in groups {
            if g.indices.is_empty() {
                return Err(Error::InvalidArg("constraint group without landmarks".into()));
            }
            if let Some(&i) = g.indices.iter().find(|&&i| i >= p) {
                return Err(Error::InvalidArg(format!("landmark index {i} out of range for {p} points")));
            }
            let w = 1.0 / g.indices.len() as f64;
            for (axis, pinned) in [(0, g.pin_x), (1, g.pin_y)] {
                if !pinned {
                    continue;
                }
                let mut row = vec![0.0; dim];
                let mut target = 0.0;
                for &i in &g.indices {
                    row[2 * i + axis] += w;
                    target += w * reference.as_slice()[2 * i + axis];
                }
                matrix.extend(row);
                targets.push(target);
            }
        }
        Self::new(matrix, targets, dim)
    }

    /// Pins three well-spread landmarks of `reference` in both axes: the
    /// leftmost, the rightmost, and the one farthest from the line through
    /// them. Six constraints fix exactly the affine frame of the prototype.
    pub fn anchor_points(reference: &Shape) -> Result<Self> {
        let pts: Vec<[f64; 2]> = reference.points().collect();
        let pick = |better: &dyn Fn(&[f64; 2], &[f64; 2]) -> bool| {
            let mut best = 0;
            for i in 1..pts.len() {
                if better(&pts[i], &pts[best]) {
                    best = i;
                }
            }
            best
        };
        let left = pick(&|a, b| a[0] < b[0]);
        let right = pick(&|a, b| a[0] > b[0]);
        let (a, b) = (pts[left], pts[right]);
        let dist = |q: &[f64; 2]| ((b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0])).abs();
        let third = pick(&|q, r| dist(q) > dist(r));
        if left == right || dist(&pts[third]) == 0.0 {
            return Err(Error::DegenerateShape("reference landmarks are collinear".into()));
        }
        let groups: Vec<ConstraintGroup> = [left, right, third]
            .into_iter()
            .map(|i| ConstraintGroup {
                indices: vec![i],
                pin_x: true,
                pin_y: true,
            })
            .collect();
        Self::from_groups(&groups, reference)
    }

    pub fn num_constraints(&self) -> usize {
        self.targets.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// `‖C s − m‖∞`.
    pub fn max_violation(&self, s: &Shape) -> Result<f64> {
        if s.as_slice().len() != self.dim {
            return Err(Error::LengthMismatch {
                expected: self.dim,
                found: s.as_slice().len(),
            });
        }
        Ok(self
            .matrix
            .chunks_exact(self.dim)
            .zip(&self.targets)
            .map(|(row, m)| (row.iter().zip(s.as_slice()).map(|(c, x)| c * x).sum::<f64>() - m).abs())
            .fold(0.0, f64::max))
    }

    fn c(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.targets.len(), self.dim, &self.matrix)
    }
}

/// Feasible set `{x0 + Z z}` of the constraints, with `Z` orthonormal.
struct FeasibleFrame {
    x0: DVector<f64>,
    z: DMatrix<f64>,
}

fn feasible_frame(constraints: &ShapeConstraints) -> Result<FeasibleFrame> {
    let dim = constraints.dim;
    let c = constraints.num_constraints();
    if c == 0 {
        return Ok(FeasibleFrame {
            x0: DVector::zeros(dim),
            z: DMatrix::identity(dim, dim),
        });
    }
    let cm = constraints.c();
    let cct = &cm * cm.transpose();
    let eig = SymmetricEigen::new(cct.clone());
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if !(lmax > 0.0) || lmin <= lmax * 1e-12 {
        return Err(Error::SingularSystem(
            "constraint matrix does not have full row rank".into(),
        ));
    }
    let m = DVector::from_column_slice(&constraints.targets);
    let y = cct
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("constraint Gram matrix is not positive definite".into()))?
        .solve(&m);
    let x0 = cm.transpose() * y;

    let ctc = cm.transpose() * &cm;
    let eig = SymmetricEigen::new(ctc);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let null = &order[..dim - c];
    let z = DMatrix::from_fn(dim, null.len(), |i, j| eig.eigenvectors[(i, null[j])]);
    Ok(FeasibleFrame { x0, z })
}

/// Orthonormal basis (`p x 3`) of the span of `[x, y, 1]` for a shape.
fn affine_span(s: &Shape) -> Result<DMatrix<f64>> {
    let p = s.num_points();
    let d = DMatrix::from_fn(p, 3, |i, j| match j {
        0 => s.as_slice()[2 * i],
        1 => s.as_slice()[2 * i + 1],
        _ => 1.0,
    });
    let svd = d.svd(true, false);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if !(smin > 0.0) || smax / smin > DEGENERACY_CONDITION {
        return Err(Error::DegenerateShape("landmarks are collinear".into()));
    }
    Ok(svd.u.expect("requested U"))
}

/// Hessian of `x ↦ Σ_n min_A ‖A(member_n) − x‖²`, in interleaved coordinates.
fn alignment_hessian(members: &[Shape]) -> Result<DMatrix<f64>> {
    let p = members[0].num_points();
    let mut h = DMatrix::<f64>::identity(p, p) * members.len() as f64;
    for s in members {
        let q = affine_span(s)?;
        h -= &q * q.transpose();
    }
    Ok(DMatrix::from_fn(2 * p, 2 * p, |r, c| {
        if r % 2 == c % 2 {
            h[(r / 2, c / 2)]
        } else {
            0.0
        }
    }))
}

/// Minimizes `Σ_n min_A ‖A(members_n) − x‖²` subject to the constraints.
///
/// Per-member transforms are eliminated in closed form: for fixed `x` the
/// optimal residual is the component of `x` outside the span of the member's
/// affine images, so the objective is a quadratic form in `x` and the
/// constrained minimum is one linear solve on the feasible subspace. Where the
/// minimizer is not unique, the solution closest to `init` is returned.
pub fn solve_prototype(members: &[Shape], init: &Shape, constraints: &ShapeConstraints) -> Result<Shape> {
    let first = members
        .first()
        .ok_or_else(|| Error::InsufficientData("prototype solve without members".into()))?;
    for s in members {
        first.check_same_len(s)?;
    }
    first.check_same_len(init)?;
    if constraints.dim() != init.as_slice().len() {
        return Err(Error::LengthMismatch {
            expected: init.as_slice().len(),
            found: constraints.dim(),
        });
    }
    let frame = feasible_frame(constraints)?;
    let hess = alignment_hessian(members)?;
    Ok(Shape::from_vec_unchecked(minimize_on_frame(&hess, &frame, init).as_slice().to_vec()))
}

fn minimize_on_frame(hess: &DMatrix<f64>, frame: &FeasibleFrame, init: &Shape) -> DVector<f64> {
    let z = &frame.z;
    if z.ncols() == 0 {
        return frame.x0.clone();
    }
    let zt = z.transpose();
    let hz = hess * z;
    let hr = &zt * &hz;
    let init_v = DVector::from_column_slice(init.as_slice());
    let z_init = &zt * (init_v - &frame.x0);
    // Gradient of the reduced objective at z_init, halved.
    let grad = &zt * (hess * &frame.x0) + &hr * &z_init;
    let eig = SymmetricEigen::new(hr);
    let lmax = eig.eigenvalues.iter().fold(0f64, |m, v| m.max(v.abs()));
    let mut step = DVector::zeros(z.ncols());
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > lmax * 1e-10 {
            let q = eig.eigenvectors.column(k);
            step -= q * (q.dot(&grad) / lambda);
        }
    }
    &frame.x0 + z * (z_init + step)
}

/// Prototype of minimum norm among the feasible affine images of `seed`
/// (least-squares if no affine image is feasible), refined by a one-member
/// prototype solve. Depends on `seed` only through its affine class.
fn seed_prototype(seed: &Shape, constraints: &ShapeConstraints) -> Result<Shape> {
    let p = seed.num_points();
    let q3 = affine_span(seed)?;
    let q = DMatrix::from_fn(2 * p, 6, |r, c| if r % 2 == c / 3 { q3[(r / 2, c % 3)] } else { 0.0 });
    let cm = constraints.c();
    let m = DVector::from_column_slice(constraints.targets());
    let start = if constraints.num_constraints() == 0 {
        DVector::zeros(2 * p)
    } else {
        let cq = &cm * &q;
        let phi = cq
            .svd(true, true)
            .solve(&m, 1e-12)
            .map_err(|e| Error::SingularSystem(e.to_string()))?;
        &q * phi
    };
    let start = Shape::from_vec_unchecked(start.as_slice().to_vec());
    solve_prototype(std::slice::from_ref(seed), &start, constraints)
}

/// Index of the prototype with the smallest alignment error (ties: lowest
/// index), and that error.
pub fn assign_shape(s: &Shape, prototypes: &[Shape]) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (l, proto) in prototypes.iter().enumerate() {
        let (_, r) = fit_affine_with_residual(s, proto)?;
        let e = r / s.num_points() as f64;
        if best.is_none_or(|(_, b)| e < b) {
            best = Some((l, e));
        }
    }
    best.ok_or_else(|| Error::InvalidArg("no prototypes to assign to".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub prototypes: Vec<Shape>,
    /// Zero-based prototype index per input shape.
    pub assignments: Vec<usize>,
    /// Objective after the initial assignment and after every later half-step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn squared_distance(a: &Shape, b: &Shape) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Misfit of `s` against `proto` in objective units (raw squared residual).
fn misfit(transform: TransformClass, s: &Shape, proto: &Shape) -> Result<f64> {
    match transform {
        TransformClass::Identity => Ok(squared_distance(s, proto)),
        TransformClass::Affine => Ok(fit_affine_with_residual(s, proto)?.1),
    }
}

fn validate_inputs(shapes: &[Shape], l: usize) -> Result<()> {
    if l < 1 {
        return Err(Error::InvalidArg("cluster count must be at least 1".into()));
    }
    if shapes.len() < l {
        return Err(Error::InsufficientData(format!(
            "{} shapes cannot fill {l} clusters",
            shapes.len()
        )));
    }
    for s in &shapes[1..] {
        shapes[0].check_same_len(s)?;
    }
    Ok(())
}

/// Alternates assignment and constrained prototype updates until the
/// assignments stop changing or `max_iter` rounds have run.
///
/// Seeding: the first seed is `shapes[rng.random_range(0..n)]` with a
/// `ChaCha8Rng` seeded by `seed`; each further seed is the shape with the
/// largest misfit to its nearest existing seed (ties: lowest index). An
/// empty cluster takes over the globally worst-fitting shape and is re-seeded
/// from it.
pub fn cluster_shapes(
    shapes: &[Shape],
    l: usize,
    transform: TransformClass,
    constraints: &ShapeConstraints,
    seed: u64,
    max_iter: usize,
) -> Result<ClusterResult> {
    validate_inputs(shapes, l)?;
    let dim = shapes[0].as_slice().len();
    if transform == TransformClass::Affine {
        if constraints.dim() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                found: constraints.dim(),
            });
        }
        if constraints.num_constraints() < 3 {
            return Err(Error::InvalidArg(
                "affine clustering needs at least 3 prototype constraints".into(),
            ));
        }
    }
    let make_seed = |s: &Shape| -> Result<Shape> {
        match transform {
            TransformClass::Identity => Ok(s.clone()),
            TransformClass::Affine => seed_prototype(s, constraints),
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..shapes.len());
    let mut prototypes = vec![make_seed(&shapes[first])?];
    let mut nearest: Vec<f64> = shapes
        .par_iter()
        .map(|s| misfit(transform, s, &prototypes[0]))
        .collect::<Result<_>>()?;
    while prototypes.len() < l {
        let far = argmax_first(&nearest);
        let proto = make_seed(&shapes[far])?;
        let d: Vec<f64> = shapes
            .par_iter()
            .map(|s| misfit(transform, s, &proto))
            .collect::<Result<_>>()?;
        for (n, v) in nearest.iter_mut().zip(d) {
            *n = n.min(v);
        }
        prototypes.push(proto);
    }

    let mut trace = Vec::new();
    let (mut assignments, mut errors) = assign_all(shapes, &prototypes, transform)?;
    repair_empty(shapes, &mut prototypes, &mut assignments, &mut errors, transform, &make_seed)?;
    trace.push(errors.iter().sum());

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        for (k, proto) in prototypes.iter_mut().enumerate() {
            let members: Vec<Shape> = shapes
                .iter()
                .zip(&assignments)
                .filter(|(_, &a)| a == k)
                .map(|(s, _)| s.clone())
                .collect();
            *proto = match transform {
                TransformClass::Identity => crate::geometry::mean_shape(&members)?,
                TransformClass::Affine => solve_prototype(&members, proto, constraints)?,
            };
        }
        trace.push(objective(shapes, &prototypes, &assignments, transform)?);

        let (mut next, mut next_err) = assign_all(shapes, &prototypes, transform)?;
        repair_empty(shapes, &mut prototypes, &mut next, &mut next_err, transform, &make_seed)?;
        trace.push(next_err.iter().sum());
        let unchanged = next == assignments;
        assignments = next;
        if unchanged {
            converged = true;
            break;
        }
    }
    Ok(ClusterResult {
        prototypes,
        assignments,
        objective_trace: trace,
        iterations,
        converged,
    })
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

fn assign_all(shapes: &[Shape], prototypes: &[Shape], transform: TransformClass) -> Result<(Vec<usize>, Vec<f64>)> {
    let pairs: Vec<(usize, f64)> = shapes
        .par_iter()
        .map(|s| {
            let mut best = (0, misfit(transform, s, &prototypes[0])?);
            for (l, proto) in prototypes.iter().enumerate().skip(1) {
                let e = misfit(transform, s, proto)?;
                if e < best.1 {
                    best = (l, e);
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

fn objective(shapes: &[Shape], prototypes: &[Shape], assignments: &[usize], transform: TransformClass) -> Result<f64> {
    shapes
        .par_iter()
        .zip(assignments)
        .map(|(s, &a)| misfit(transform, s, &prototypes[a]))
        .collect::<Result<Vec<f64>>>()
        .map(|v| v.iter().sum())
}

fn repair_empty(
    shapes: &[Shape],
    prototypes: &mut [Shape],
    assignments: &mut [usize],
    errors: &mut [f64],
    transform: TransformClass,
    make_seed: &dyn Fn(&Shape) -> Result<Shape>,
) -> Result<()> {
    loop {
        let mut counts = vec![0usize; prototypes.len()];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return Ok(());
        };
        // Worst-fitting shape among clusters that can spare one.
        let mut worst: Option<usize> = None;
        for n in 0..shapes.len() {
            if counts[assignments[n]] > 1 && worst.is_none_or(|w| errors[n] > errors[w]) {
                worst = Some(n);
            }
        }
        let n = worst.ok_or_else(|| Error::InsufficientData("too few distinct shapes to fill every cluster".into()))?;
        prototypes[empty] = make_seed(&shapes[n])?;
        assignments[n] = empty;
        errors[n] = misfit(transform, &shapes[n], &prototypes[empty])?;
    }
}

/// Standard Lloyd iteration on flattened shape vectors, seeded the same way
/// as [`cluster_shapes`].
pub fn cluster_shapes_euclidean(shapes: &[Shape], l: usize, seed: u64, max_iter: usize) -> Result<ClusterResult> {
    validate_inputs(shapes, l)?;
    let dim = shapes[0].as_slice().len();
    let data: Vec<&[f64]> = shapes.iter().map(|s| s.as_slice()).collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = vec![data[rng.random_range(0..data.len())].to_vec()];
    let mut nearest: Vec<f64> = data.iter().map(|x| dist(x, &centers[0])).collect();
    while centers.len() < l {
        let c = data[argmax_first(&nearest)].to_vec();
        for (n, x) in nearest.iter_mut().zip(&data) {
            *n = n.min(dist(x, &c));
        }
        centers.push(c);
    }

    let assign = |centers: &[Vec<f64>]| -> (Vec<usize>, Vec<f64>) {
        data.iter()
            .map(|x| {
                let mut best = (0, dist(x, &centers[0]));
                for (k, c) in centers.iter().enumerate().skip(1) {
                    let d = dist(x, c);
                    if d < best.1 {
                        best = (k, d);
                    }
                }
                best
            })
            .unzip()
    };
    let reseed_empty = |centers: &mut [Vec<f64>], labels: &mut [usize], d: &mut [f64]| loop {
        let mut counts = vec![0usize; l];
        labels.iter().for_each(|&a| counts[a] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else { break };
        let n = (0..data.len())
            .filter(|&n| counts[labels[n]] > 1)
            .fold(None, |w: Option<usize>, n| if w.is_none_or(|w| d[n] > d[w]) { Some(n) } else { w })
            .expect("n >= l guarantees a donor cluster");
        centers[empty] = data[n].to_vec();
        labels[n] = empty;
        d[n] = 0.0;
    };

    let (mut labels, mut d) = assign(&centers);
    reseed_empty(&mut centers, &mut labels, &mut d);
    let mut trace = vec![d.iter().sum()];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; l];
        let mut counts = vec![0usize; l];
        for (x, &a) in data.iter().zip(&labels) {
            counts[a] += 1;
            sums[a].iter_mut().zip(x.iter()).for_each(|(s, v)| *s += v);
        }
        for ((c, s), n) in centers.iter_mut().zip(sums).zip(counts) {
            *c = s.into_iter().map(|v| v / n as f64).collect();
        }
        trace.push(data.iter().zip(&labels).map(|(x, &a)| dist(x, &centers[a])).sum());
        let (mut next, mut nd) = assign(&centers);
        reseed_empty(&mut centers, &mut next, &mut nd);
        trace.push(nd.iter().sum());
        let unchanged = next == labels;
        labels = next;
        if unchanged {
            converged = true;
            break;
        }
    }
    Ok(ClusterResult {
        prototypes: centers.into_iter().map(Shape::from_vec_unchecked).collect(),
        assignments: labels,
        objective_trace: trace,
        iterations,
        converged,
    })
}
