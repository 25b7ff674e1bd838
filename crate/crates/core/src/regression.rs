//! Weighted ridge regression with cross-validated regularization and
//! residual-based trimming.
//!
//! The loss is `Σ α_i ‖y_i − W φ_i − b‖² + γ (‖W‖² + ‖b‖²)`; the bias is
//! regularized like every other coefficient. Fits go through the normal
//! equations of the bias-augmented design, factored by Cholesky. Unregularized
//! fits use a column-pivoted QR instead so rank deficiency is detected.

use faer::linalg::matmul::triangular::{self, BlockStructure};
use faer::linalg::matmul::matmul;
use faer::linalg::solvers::{Solve, SolveLstsq};
use faer::{Accum, Mat, MatRef, Par, Side};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One linear stage `x ↦ W x + b`, with `W` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionStage {
    weights: Vec<f64>,
    bias: Vec<f64>,
    n_in: usize,
    pub gamma_used: f64,
    pub lambda_used: f64,
}

impl RegressionStage {
    pub fn new(weights: Vec<f64>, bias: Vec<f64>, n_in: usize) -> Result<Self> {
        if weights.len() != bias.len() * n_in {
            return Err(Error::LengthMismatch {
                expected: bias.len() * n_in,
                found: weights.len(),
            });
        }
        if bias.is_empty() || n_in == 0 {
            return Err(Error::InvalidArg("regression stage with empty dimension".into()));
        }
        if !weights.iter().chain(&bias).all(|v| v.is_finite()) {
            return Err(Error::InvalidArg("non-finite regression coefficient".into()));
        }
        Ok(Self {
            weights,
            bias,
            n_in,
            gamma_used: 0.0,
            lambda_used: 0.0,
        })
    }

    pub fn zeros(n_out: usize, n_in: usize) -> Self {
        Self {
            weights: vec![0.0; n_out * n_in],
            bias: vec![0.0; n_out],
            n_in,
            gamma_used: 0.0,
            lambda_used: 0.0,
        }
    }

    pub fn input_len(&self) -> usize {
        self.n_in
    }

    pub fn output_len(&self) -> usize {
        self.bias.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.n_in + col]
    }

    pub fn predict(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.n_in {
            return Err(Error::LengthMismatch {
                expected: self.n_in,
                found: features.len(),
            });
        }
        Ok(self
            .weights
            .chunks_exact(self.n_in)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    pub features: Vec<f64>,
    pub target: Vec<f64>,
    pub weight: f64,
}

/// Decade grid `10^-4 ..= 10^4`.
pub fn default_gamma_grid() -> Vec<f64> {
    (-4..=4).map(|e| 10f64.powi(e)).collect()
}

/// Design matrices for a weighted fit: `features` is `n x F`, `targets` is
/// `n x T`, one weight per row.
#[derive(Clone, Copy)]
pub(crate) struct Design<'a> {
    pub features: MatRef<'a, f64>,
    pub targets: MatRef<'a, f64>,
    pub weights: &'a [f64],
}

impl Design<'_> {
    fn active_rows(&self) -> Vec<usize> {
        (0..self.weights.len()).filter(|&i| self.weights[i] > 0.0).collect()
    }

    fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        if self.targets.nrows() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: self.targets.nrows(),
            });
        }
        if self.weights.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: self.weights.len(),
            });
        }
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidArg(format!("sample weight {w} is not a finite non-negative number")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct CvFit {
    pub stage: RegressionStage,
    pub gamma: f64,
    pub cv_error: f64,
    /// Fits on each fold alone at the chosen `γ`.
    pub fold_stages: [RegressionStage; 2],
    /// Fold of each design row (0 or 1); `None` for zero-weight rows.
    pub row_fold: Vec<Option<u8>>,
}

impl CvFit {
    /// The stage that never saw `row` during fitting: the other fold's fit,
    /// or the full fit for rows that carried no weight.
    pub fn out_of_fold(&self, row: usize) -> &RegressionStage {
        match self.row_fold[row] {
            Some(f) => &self.fold_stages[1 - f as usize],
            None => &self.stage,
        }
    }
}

/// Normal-equation pieces for a subset of rows, each row scaled by `√α`.
struct ScaledBlock {
    xs: Mat<f64>,
    ys: Mat<f64>,
    gram: Mat<f64>,
    xty: Mat<f64>,
    weight_sum: f64,
}

fn scaled_block(d: &Design, rows: &[usize]) -> ScaledBlock {
    let f = d.features.ncols();
    let t = d.targets.ncols();
    let sw: Vec<f64> = rows.iter().map(|&r| d.weights[r].sqrt()).collect();
    let xs = Mat::from_fn(rows.len(), f + 1, |i, j| {
        if j < f {
            sw[i] * d.features[(rows[i], j)]
        } else {
            sw[i]
        }
    });
    let ys = Mat::from_fn(rows.len(), t, |i, j| sw[i] * d.targets[(rows[i], j)]);
    let mut gram = Mat::<f64>::zeros(f + 1, f + 1);
    triangular::matmul(
        gram.as_mut(),
        BlockStructure::TriangularLower,
        Accum::Replace,
        xs.transpose(),
        BlockStructure::Rectangular,
        xs.as_ref(),
        BlockStructure::Rectangular,
        1.0,
        Par::Seq,
    );
    let mut xty = Mat::<f64>::zeros(f + 1, t);
    matmul(xty.as_mut(), Accum::Replace, xs.transpose(), ys.as_ref(), 1.0, Par::Seq);
    let weight_sum = rows.iter().map(|&r| d.weights[r]).sum();
    ScaledBlock {
        xs,
        ys,
        gram,
        xty,
        weight_sum,
    }
}

/// Solves `(G + γI) θ = rhs` with `G` given by its lower triangle.
fn solve_regularized(gram: &Mat<f64>, rhs: &Mat<f64>, gamma: f64) -> Result<Mat<f64>> {
    let mut a = gram.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += gamma;
    }
    let llt = a
        .llt(Side::Lower)
        .map_err(|_| Error::SingularSystem(format!("normal equations not positive definite at gamma {gamma}")))?;
    Ok(llt.solve(rhs))
}

fn solve_unregularized(xs: &Mat<f64>, ys: &Mat<f64>) -> Result<Mat<f64>> {
    if xs.nrows() < xs.ncols() {
        return Err(Error::SingularSystem(format!(
            "{} weighted samples cannot determine {} coefficients without regularization",
            xs.nrows(),
            xs.ncols()
        )));
    }
    let qr = xs.col_piv_qr();
    let r = qr.thin_R();
    let k = r.ncols();
    let largest = r[(0, 0)].abs();
    let smallest = r[(k - 1, k - 1)].abs();
    if !(smallest > largest * 1e-10) {
        return Err(Error::SingularSystem(
            "rank-deficient design with zero regularization".into(),
        ));
    }
    Ok(qr.solve_lstsq(ys))
}

fn held_out_error(block: &ScaledBlock, theta: &Mat<f64>) -> f64 {
    let mut pred = Mat::<f64>::zeros(block.ys.nrows(), block.ys.ncols());
    matmul(pred.as_mut(), Accum::Replace, block.xs.as_ref(), theta.as_ref(), 1.0, Par::Seq);
    let mut err = 0.0;
    for j in 0..pred.ncols() {
        for i in 0..pred.nrows() {
            let r = block.ys[(i, j)] - pred[(i, j)];
            err += r * r;
        }
    }
    err
}

fn stage_from_theta(theta: &Mat<f64>, n_in: usize, gamma: f64) -> Result<RegressionStage> {
    let t = theta.ncols();
    let mut weights = Vec::with_capacity(t * n_in);
    for o in 0..t {
        weights.extend((0..n_in).map(|j| theta[(j, o)]));
    }
    let bias = (0..t).map(|o| theta[(n_in, o)]).collect();
    let mut stage = RegressionStage::new(weights, bias, n_in)
        .map_err(|_| Error::SingularSystem("regression produced non-finite coefficients".into()))?;
    stage.gamma_used = gamma;
    Ok(stage)
}

pub(crate) fn fit_design(d: &Design, gamma: f64) -> Result<RegressionStage> {
    d.validate()?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArg(format!("gamma must be finite and non-negative, got {gamma}")));
    }
    let rows = d.active_rows();
    if rows.is_empty() {
        return Err(Error::InsufficientData("no sample has positive weight".into()));
    }
    let block = scaled_block(d, &rows);
    let theta = if gamma == 0.0 {
        solve_unregularized(&block.xs, &block.ys)?
    } else {
        solve_regularized(&block.gram, &block.xty, gamma)?
    };
    stage_from_theta(&theta, d.features.ncols(), gamma)
}

/// Deterministic two-way split of the positive-weight rows.
fn fold_split(rows: &[usize], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut shuffled = rows.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = shuffled.len().div_ceil(2);
    let mut a = shuffled[..half].to_vec();
    let mut b = shuffled[half..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

/// Two-fold cross-validated choice of `γ` over `grid`, followed by a refit on
/// all rows at the chosen value. Ties go to the smallest `γ`.
pub(crate) fn fit_design_cv(d: &Design, grid: &[f64], seed: u64) -> Result<CvFit> {
    d.validate()?;
    if grid.is_empty() {
        return Err(Error::InvalidArg("empty regularization grid".into()));
    }
    if let Some(g) = grid.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
        return Err(Error::InvalidArg(format!("invalid grid value {g}")));
    }
    let rows = d.active_rows();
    if rows.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "cross-validation needs at least 4 weighted samples, got {}",
            rows.len()
        )));
    }
    let (ra, rb) = fold_split(&rows, seed);
    let fa = scaled_block(d, &ra);
    let fb = scaled_block(d, &rb);
    let total_weight = fa.weight_sum + fb.weight_sum;

    let mut sorted: Vec<f64> = grid.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut best: Option<(f64, f64, [Mat<f64>; 2])> = None;
    for &gamma in &sorted {
        let Ok((err, thetas)) = cv_pair_error(&fa, &fb, gamma) else { continue };
        let err = err / total_weight;
        if !err.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|(_, e, _)| err < *e) {
            best = Some((gamma, err, thetas));
        }
    }
    let (gamma, cv_error, [theta_a, theta_b]) = best.ok_or_else(|| {
        Error::SingularSystem("no grid value yields a solvable regression".into())
    })?;
    let n_in = d.features.ncols();
    let fold_stages = [stage_from_theta(&theta_a, n_in, gamma)?, stage_from_theta(&theta_b, n_in, gamma)?];
    let mut row_fold = vec![None; d.weights.len()];
    ra.iter().for_each(|&r| row_fold[r] = Some(0));
    rb.iter().for_each(|&r| row_fold[r] = Some(1));

    let theta = if gamma == 0.0 {
        drop((fa, fb));
        let block = scaled_block(d, &rows);
        solve_unregularized(&block.xs, &block.ys)?
    } else {
        let gram = &fa.gram + &fb.gram;
        let xty = &fa.xty + &fb.xty;
        solve_regularized(&gram, &xty, gamma)?
    };
    Ok(CvFit {
        stage: stage_from_theta(&theta, n_in, gamma)?,
        gamma,
        cv_error,
        fold_stages,
        row_fold,
    })
}

/// Summed held-out error of the two cross-fits, with the fold fits.
fn cv_pair_error(fa: &ScaledBlock, fb: &ScaledBlock, gamma: f64) -> Result<(f64, [Mat<f64>; 2])> {
    let fit = |train: &ScaledBlock| {
        if gamma == 0.0 {
            solve_unregularized(&train.xs, &train.ys)
        } else {
            solve_regularized(&train.gram, &train.xty, gamma)
        }
    };
    let theta_a = fit(fa)?;
    let theta_b = fit(fb)?;
    let err = held_out_error(fb, &theta_a) + held_out_error(fa, &theta_b);
    Ok((err, [theta_a, theta_b]))
}

fn samples_to_mats(samples: &[WeightedSample]) -> Result<(Mat<f64>, Mat<f64>, Vec<f64>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InsufficientData("no samples".into()))?;
    let (f, t) = (first.features.len(), first.target.len());
    if f == 0 || t == 0 {
        return Err(Error::InvalidArg("empty feature or target vector".into()));
    }
    for s in samples {
        if s.features.len() != f {
            return Err(Error::LengthMismatch {
                expected: f,
                found: s.features.len(),
            });
        }
        if s.target.len() != t {
            return Err(Error::LengthMismatch {
                expected: t,
                found: s.target.len(),
            });
        }
        if !s.features.iter().chain(&s.target).all(|v| v.is_finite()) {
            return Err(Error::InvalidArg("non-finite sample entry".into()));
        }
    }
    let x = Mat::from_fn(samples.len(), f, |i, j| samples[i].features[j]);
    let y = Mat::from_fn(samples.len(), t, |i, j| samples[i].target[j]);
    let w = samples.iter().map(|s| s.weight).collect();
    Ok((x, y, w))
}

/// Minimizes the weighted, bias-regularized ridge loss.
pub fn fit_ridge(samples: &[WeightedSample], gamma: f64) -> Result<RegressionStage> {
    let (x, y, w) = samples_to_mats(samples)?;
    fit_design(
        &Design {
            features: x.as_ref(),
            targets: y.as_ref(),
            weights: &w,
        },
        gamma,
    )
}

/// Returns the grid value with the lowest two-fold held-out error, and that
/// error (summed weighted squared residual over both held-out folds divided by
/// their total weight).
pub fn select_gamma(samples: &[WeightedSample], grid: &[f64], seed: u64) -> Result<(f64, f64)> {
    let (x, y, w) = samples_to_mats(samples)?;
    let fit = fit_design_cv(
        &Design {
            features: x.as_ref(),
            targets: y.as_ref(),
            weights: &w,
        },
        grid,
        seed,
    )?;
    Ok((fit.gamma, fit.cv_error))
}

/// Weighted ridge loss of `stage` on `samples`.
pub fn ridge_objective(stage: &RegressionStage, samples: &[WeightedSample], gamma: f64) -> Result<f64> {
    let mut loss = 0.0;
    for s in samples {
        let pred = stage.predict(&s.features)?;
        if pred.len() != s.target.len() {
            return Err(Error::LengthMismatch {
                expected: pred.len(),
                found: s.target.len(),
            });
        }
        loss += s.weight * pred.iter().zip(&s.target).map(|(p, t)| (t - p).powi(2)).sum::<f64>();
    }
    let penalty: f64 = stage.weights().iter().chain(stage.bias()).map(|v| v * v).sum();
    Ok(loss + gamma * penalty)
}

/// Indices (ascending) kept after dropping the `ceil(fraction·n)` largest
/// residuals; among equal residuals the later sample is dropped first.
pub fn retained_indices(residuals: &[f64], fraction: f64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArg(format!("trim fraction must lie in [0, 1), got {fraction}")));
    }
    if let Some(r) = residuals.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return Err(Error::InvalidArg(format!("residual {r} is not a finite non-negative number")));
    }
    let n = residuals.len();
    // Guard against 0.05 * 20 evaluating to 1.0000000000000002.
    let drop = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| residuals[b].total_cmp(&residuals[a]).then(b.cmp(&a)));
    let mut keep: Vec<usize> = order[drop.min(n)..].to_vec();
    keep.sort_unstable();
    Ok(keep)
}

pub fn trim_outliers<T: Clone>(samples: &[T], residuals: &[f64], fraction: f64) -> Result<Vec<T>> {
    if samples.len() != residuals.len() {
        return Err(Error::LengthMismatch {
            expected: samples.len(),
            found: residuals.len(),
        });
    }
    Ok(retained_indices(residuals, fraction)?
        .into_iter()
        .map(|i| samples[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_problem(n: usize, f: usize, t: usize, noise: f64, seed: u64) -> (Vec<WeightedSample>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w0: Vec<f64> = (0..t * f).map(|_| rng.sample(StandardNormal)).collect();
        let b0: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
        let samples = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..f).map(|_| rng.sample(StandardNormal)).collect();
                let y = (0..t)
                    .map(|o| {
                        b0[o]
                            + (0..f).map(|j| w0[o * f + j] * x[j]).sum::<f64>()
                            + noise * rng.sample::<f64, _>(StandardNormal)
                    })
                    .collect();
                WeightedSample {
                    features: x,
                    target: y,
                    weight: rng.random_range(0.2..2.0),
                }
            })
            .collect();
        (samples, w0, b0)
    }

    #[test]
    fn unregularized_recovers_generator() {
        let (samples, w0, b0) = random_problem(60, 8, 3, 0.0, 1);
        let stage = fit_ridge(&samples, 0.0).unwrap();
        for (a, b) in stage.weights().iter().zip(&w0).chain(stage.bias().iter().zip(&b0)) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn huge_gamma_shrinks_to_zero() {
        let (mut samples, _, _) = random_problem(30, 5, 2, 0.1, 2);
        samples.iter_mut().for_each(|s| s.weight = 1.0);
        let stage = fit_ridge(&samples, 1e12).unwrap();
        let scale = samples.iter().flat_map(|s| &s.target).fold(0f64, |m, v| m.max(v.abs()));
        let wn = stage.weights().iter().map(|v| v * v).sum::<f64>().sqrt();
        let bn = stage.bias().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(wn < 1e-6 * scale && bn < 1e-6 * scale);
    }

    #[test]
    fn zero_weight_rows_do_not_matter() {
        let (samples, _, _) = random_problem(25, 4, 2, 0.3, 3);
        let mut padded = samples.clone();
        let mut extra = random_problem(5, 4, 2, 5.0, 4).0;
        extra.iter_mut().for_each(|s| s.weight = 0.0);
        padded.splice(3..3, extra);
        let a = fit_ridge(&samples, 0.5).unwrap();
        let b = fit_ridge(&padded, 0.5).unwrap();
        for (x, y) in a.weights().iter().zip(b.weights()).chain(a.bias().iter().zip(b.bias())) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn rank_deficient_without_regularization_is_singular() {
        let (mut samples, _, _) = random_problem(20, 4, 1, 0.1, 5);
        for s in &mut samples {
            s.features[3] = s.features[1] * 2.0;
        }
        assert!(matches!(fit_ridge(&samples, 0.0), Err(Error::SingularSystem(_))));
        assert!(fit_ridge(&samples, 1e-3).is_ok());
    }

    #[test]
    fn gradient_vanishes_at_solution() {
        let (samples, _, _) = random_problem(40, 6, 3, 0.5, 6);
        let gamma = 0.7;
        let stage = fit_ridge(&samples, gamma).unwrap();
        let (f, t) = (6, 3);
        let mut gw = vec![0.0; t * f];
        let mut gb = vec![0.0; t];
        for s in &samples {
            let pred = stage.predict(&s.features).unwrap();
            for o in 0..t {
                let r = pred[o] - s.target[o];
                gb[o] += 2.0 * s.weight * r;
                for j in 0..f {
                    gw[o * f + j] += 2.0 * s.weight * r * s.features[j];
                }
            }
        }
        for (g, w) in gw.iter_mut().zip(stage.weights()) {
            *g += 2.0 * gamma * w;
        }
        for (g, b) in gb.iter_mut().zip(stage.bias()) {
            *g += 2.0 * gamma * b;
        }
        let scale = ridge_objective(&stage, &samples, gamma).unwrap().max(1.0);
        let max = gw.iter().chain(&gb).fold(0f64, |m, g| m.max(g.abs()));
        assert!(max < 1e-6 * scale, "{max}");
    }

    #[test]
    fn fitted_objective_beats_perturbations() {
        let (samples, _, _) = random_problem(30, 5, 2, 0.5, 7);
        let gamma = 0.2;
        let stage = fit_ridge(&samples, gamma).unwrap();
        let best = ridge_objective(&stage, &samples, gamma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let w = stage.weights().iter().map(|v| v + 0.01 * rng.sample::<f64, _>(StandardNormal)).collect();
            let b = stage.bias().iter().map(|v| v + 0.01 * rng.sample::<f64, _>(StandardNormal)).collect();
            let other = RegressionStage::new(w, b, 5).unwrap();
            assert!(ridge_objective(&other, &samples, gamma).unwrap() >= best);
        }
    }

    #[test]
    fn noiseless_data_prefers_small_gamma() {
        let (samples, _, _) = random_problem(80, 5, 2, 0.0, 9);
        let (gamma, err) = select_gamma(&samples, &default_gamma_grid(), 0).unwrap();
        assert_eq!(gamma, 1e-4);
        assert!(err < 1e-6);
    }

    #[test]
    fn pure_noise_prefers_large_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let samples: Vec<_> = (0..30)
            .map(|_| WeightedSample {
                features: (0..60).map(|_| rng.sample(StandardNormal)).collect(),
                target: vec![rng.sample(StandardNormal)],
                weight: 1.0,
            })
            .collect();
        let grid = default_gamma_grid();
        let (gamma, _) = select_gamma(&samples, &grid, 3).unwrap();
        assert!(gamma >= 1e2, "{gamma}");
        let errs: Vec<f64> = grid.iter().map(|&g| select_gamma(&samples, &[g], 3).unwrap().1).collect();
        // Error falls all the way up to the selected value; beyond it the
        // shrinking (regularized) bias costs a little.
        let pos = grid.iter().position(|&g| g == gamma).unwrap();
        for w in errs[..=pos].windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{errs:?}");
        }
        assert!(errs.iter().all(|&e| e >= errs[pos]));
    }

    #[test]
    fn single_grid_value_is_returned() {
        let (samples, _, _) = random_problem(12, 3, 1, 0.1, 11);
        assert_eq!(select_gamma(&samples, &[3.5], 1).unwrap().0, 3.5);
        assert!(matches!(select_gamma(&samples, &[], 1), Err(Error::InvalidArg(_))));
    }

    #[test]
    fn cv_error_matches_recomputation() {
        let (samples, _, _) = random_problem(40, 4, 2, 0.4, 12);
        let seed = 21;
        let (gamma, err) = select_gamma(&samples, &default_gamma_grid(), seed).unwrap();
        let active: Vec<usize> = (0..samples.len()).collect();
        let (a, b) = fold_split(&active, seed);
        let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
        let (sa, sb) = (pick(&a), pick(&b));
        let ma = fit_ridge(&sa, gamma).unwrap();
        let mb = fit_ridge(&sb, gamma).unwrap();
        let held = ridge_objective(&ma, &sb, 0.0).unwrap() + ridge_objective(&mb, &sa, 0.0).unwrap();
        let total: f64 = samples.iter().map(|s| s.weight).sum();
        assert!((held / total - err).abs() < 1e-10 * err.max(1.0));
    }

    #[test]
    fn trimming_rules() {
        let r: Vec<f64> = (0..20).map(|i| ((i * 7) % 20) as f64).collect();
        assert_eq!(retained_indices(&r, 0.0).unwrap().len(), 20);
        let keep = retained_indices(&r, 0.05).unwrap();
        assert_eq!(keep.len(), 19);
        let argmax = (0..20).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
        assert!(!keep.contains(&argmax));
        assert!(retained_indices(&r, 1.0).is_err());

        let tied = [1.0, 3.0, 3.0, 0.5];
        assert_eq!(retained_indices(&tied, 0.25).unwrap(), vec![0, 1, 3]);
        let items = ["a", "b", "c", "d"];
        assert_eq!(trim_outliers(&items, &tied, 0.25).unwrap(), vec!["a", "b", "d"]);
    }
}
