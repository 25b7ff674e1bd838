//! Inter-pupil normalized landmark error, cumulative error curves, NAUC, and
//! the ablation benchmark.

use std::time::Instant;

use rayon::prelude::*;

use crate::cascade::{init_from_bbox, mix_align, train_with_report, MixModel, Mode, TrainConfig, TrainReport, TrainingSample};
use crate::error::{Error, Result};
use crate::geometry::{Rect, Shape};

/// Thresholds reported by default.
pub const DEFAULT_ALPHAS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

/// Pupil landmark sets for common markups: the 68- and 49-point
/// conventions (eye contours) and the synthetic layout (eye triangles at
/// landmarks 6–8 and 9–11) for any other count of at least 20.
pub fn default_pupils(p: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    match p {
        68 => Ok(((36..42).collect(), (42..48).collect())),
        49 => Ok(((19..25).collect(), (25..31).collect())),
        p if p >= 20 => Ok((vec![6, 7, 8], vec![9, 10, 11])),
        _ => Err(Error::InvalidArg(format!("no default pupil landmarks for {p}-point shapes"))),
    }
}

fn group_center(s: &Shape, idx: &[usize]) -> Result<[f64; 2]> {
    if idx.is_empty() {
        return Err(Error::InvalidArg("empty pupil landmark set".into()));
    }
    let mut c = [0.0; 2];
    for &i in idx {
        if i >= s.num_points() {
            return Err(Error::InvalidArg(format!(
                "pupil landmark {i} out of range for {} points",
                s.num_points()
            )));
        }
        let [x, y] = s.point(i);
        c[0] += x;
        c[1] += y;
    }
    let n = idx.len() as f64;
    Ok([c[0] / n, c[1] / n])
}

/// Mean landmark distance divided by the distance between the two pupil
/// centres of `gt`, each the mean of its landmark set.
pub fn normalized_error(pred: &Shape, gt: &Shape, left_pupil: &[usize], right_pupil: &[usize]) -> Result<f64> {
    let l = group_center(gt, left_pupil)?;
    let r = group_center(gt, right_pupil)?;
    let iod = (l[0] - r[0]).hypot(l[1] - r[1]);
    if !(iod > 0.0) {
        return Err(Error::InvalidArg("inter-pupil distance is zero".into()));
    }
    Ok(pred.mean_point_distance(gt)? / iod)
}

fn check_errors(errors: &[f64]) -> Result<()> {
    if errors.is_empty() {
        return Err(Error::InvalidArg("no errors given".into()));
    }
    if let Some(e) = errors.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(Error::InvalidArg(format!("error {e} is not a finite non-negative number")));
    }
    Ok(())
}

/// Area under the empirical CDF `F(e) = #{e_i <= e} / n` on `[0, α]`,
/// divided by `α`. Each error contributes `max(0, 1 − e_i/α)`; the ratio
/// form keeps the textbook cases exact in floating point.
pub fn nauc(errors: &[f64], alpha: f64) -> Result<f64> {
    check_errors(errors)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArg(format!("alpha must be positive, got {alpha}")));
    }
    let area: f64 = errors.iter().map(|e| (1.0 - e / alpha).max(0.0)).sum();
    Ok(area / errors.len() as f64)
}

/// Vertices of the empirical CDF: each distinct error with the fraction of
/// errors at or below it.
pub fn cdf_points(errors: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_errors(errors)?;
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, e) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *e => last.1 = frac,
            _ => out.push((*e, frac)),
        }
    }
    Ok(out)
}

/// One test image for evaluation.
#[derive(Debug, Clone)]
pub struct EvalSample<'a> {
    pub image: &'a crate::geometry::GrayImage,
    pub shape: &'a Shape,
    pub bbox: Rect,
}

/// Normalized error of every sample after bounding-box initialization and
/// alignment. Samples whose alignment fails count as infinitely wrong.
pub fn evaluate(model: &MixModel, samples: &[EvalSample], left_pupil: &[usize], right_pupil: &[usize]) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| {
            let init = init_from_bbox(&s.bbox, model)?;
            match mix_align(s.image, &init, model) {
                Ok((pred, _)) => normalized_error(&pred, s.shape, left_pupil, right_pupil),
                Err(Error::DegenerateShape(_) | Error::SingularTransform { .. }) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// NAUC at every threshold, treating non-finite errors as failures.
pub fn nauc_row(errors: &[f64], alphas: &[f64]) -> Result<Vec<f64>> {
    let clipped: Vec<f64> = errors.iter().map(|e| if e.is_finite() { *e } else { f64::MAX }).collect();
    alphas.iter().map(|&a| nauc(&clipped, a)).collect()
}

/// One ablation variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variant {
    pub mode: Mode,
    pub constrained: bool,
}

impl Variant {
    pub fn label(&self, experts: usize) -> String {
        let base = match self.mode {
            Mode::Sdm => "SDM".to_string(),
            Mode::TiSdm => "TI-SDM".to_string(),
            Mode::Mix => format!("MIX({experts})"),
        };
        if self.constrained {
            format!("{base} w/ const.")
        } else {
            base
        }
    }
}

/// Training settings for the synthetic ablation. Fewer initializations per
/// image and a regularization grid cut to the range the synthetic faces ever
/// select keep all four variants within minutes on one core; the gating
/// temperature is wide enough that the mean-shape start is shared among
/// experts instead of routed to one of them.
pub fn benchmark_config() -> TrainConfig {
    TrainConfig {
        perturbations: 10,
        temperature: 300.0,
        gamma_grid: (-4..=0).map(|e| 10f64.powi(e)).collect(),
        ..TrainConfig::default()
    }
}

/// SDM, TI-SDM, MIX without and with constraint features.
pub fn standard_variants() -> Vec<Variant> {
    vec![
        Variant { mode: Mode::Sdm, constrained: false },
        Variant { mode: Mode::TiSdm, constrained: false },
        Variant { mode: Mode::Mix, constrained: false },
        Variant { mode: Mode::Mix, constrained: true },
    ]
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub variant: Variant,
    pub nauc: Vec<f64>,
    pub errors: Vec<f64>,
    pub report: TrainReport,
    pub seconds: f64,
}

/// Trains and evaluates each variant from the same base configuration.
pub fn run_ablation(
    train: &[TrainingSample],
    test: &[EvalSample],
    base: &TrainConfig,
    variants: &[Variant],
    alphas: &[f64],
    left_pupil: &[usize],
    right_pupil: &[usize],
) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|&variant| {
            let start = Instant::now();
            let cfg = base.clone().with_mode(variant.mode, variant.constrained);
            let (model, report) = train_with_report(train, &cfg)?;
            let errors = evaluate(&model, test, left_pupil, right_pupil)?;
            Ok(AblationRow {
                label: variant.label(base.num_experts),
                variant,
                nauc: nauc_row(&errors, alphas)?,
                errors,
                report,
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

/// Fixed-width table: one row per variant, one NAUC column per threshold.
pub fn format_table(rows: &[AblationRow], alphas: &[f64]) -> String {
    let mut out = format!("{:<20}", "method");
    for a in alphas {
        out.push_str(&format!(" {:>9}", format!("NAUC{a}")));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{:<20}", r.label));
        for v in &r.nauc {
            out.push_str(&format!(" {v:>9.4}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nauc_reference_values() {
        assert_eq!(nauc(&[0.05, 0.15], 0.2).unwrap(), 0.5);
        assert_eq!(nauc(&[0.0, 0.0, 0.0], 0.1).unwrap(), 1.0);
        assert_eq!(nauc(&[0.3, 0.7], 0.2).unwrap(), 0.0);
    }

    #[test]
    fn nauc_matches_staircase_integration() {
        let errors = [0.02, 0.3, 0.07, 0.07, 0.11, 0.0, 0.19];
        for alpha in [0.05, 0.1, 0.2, 0.5] {
            let pts = cdf_points(&errors).unwrap();
            let mut area = 0.0;
            for (i, &(e, f)) in pts.iter().enumerate() {
                let next = pts.get(i + 1).map_or(alpha, |p| p.0.min(alpha));
                if e < alpha {
                    area += f * (next - e);
                }
            }
            assert!((area / alpha - nauc(&errors, alpha).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn cdf_collapses_duplicates() {
        assert_eq!(cdf_points(&[0.4]).unwrap(), vec![(0.4, 1.0)]);
        assert_eq!(cdf_points(&[0.2, 0.1, 0.2, 0.3]).unwrap(), vec![(0.1, 0.25), (0.2, 0.75), (0.3, 1.0)]);
    }

    #[test]
    fn nauc_rejects_bad_input() {
        assert!(nauc(&[], 0.1).is_err());
        assert!(nauc(&[0.1], 0.0).is_err());
        assert!(nauc(&[-0.1], 0.1).is_err());
    }

    #[test]
    fn normalized_error_definition() {
        let gt = Shape::from_points(&[[0.0, 0.0], [4.0, 0.0], [2.0, 3.0]]).unwrap();
        let pred = Shape::from_points(&[[0.0, 4.0], [4.0, 4.0], [2.0, 7.0]]).unwrap();
        assert_eq!(normalized_error(&gt, &gt, &[0], &[1]).unwrap(), 0.0);
        assert_eq!(normalized_error(&pred, &gt, &[0], &[1]).unwrap(), 1.0);
        assert!(normalized_error(&pred, &gt, &[0], &[0]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn nauc_is_bounded_and_grows_with_alpha(
            errors in proptest::collection::vec(0.0f64..2.0, 1..40),
            a in 0.01f64..1.0,
            b in 0.01f64..1.0,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (x, y) = (nauc(&errors, lo).unwrap(), nauc(&errors, hi).unwrap());
            proptest::prop_assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
            proptest::prop_assert!(y >= x - 1e-12);
        }
    }
}
