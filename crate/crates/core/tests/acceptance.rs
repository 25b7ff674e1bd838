//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::time::Instant;

use mixalign::cascade::{
    gating_weights, init_from_bbox, mix_align, softmax_gating, train, MixModel, TrainConfig, TrainingSample,
};
use mixalign::clustering::{cluster_shapes, ShapeConstraints, TransformClass};
use mixalign::evaluation::{benchmark_config, nauc, run_ablation, standard_variants, EvalSample};
use mixalign::geometry::{
    canonical_normalize, fit_affine_with_residual, warp_image, AffineTransform, Shape,
};
use mixalign::io::{decode_model, encode_model, load_model, save_model, MODEL_VERSION};
use mixalign::regression::{fit_ridge, RegressionStage, WeightedSample};
use mixalign::synth::{sample_many, SynthInstance, SynthModel};
use mixalign::Error;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_affine(rng: &mut ChaCha8Rng, spread: f64) -> AffineTransform {
    loop {
        let t = AffineTransform {
            linear: [
                [rng.random_range(-spread..spread), rng.random_range(-spread..spread)],
                [rng.random_range(-spread..spread), rng.random_range(-spread..spread)],
            ],
            translation: [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)],
        };
        if t.det().abs() > 0.1 {
            return t;
        }
    }
}

fn params(t: &AffineTransform) -> [f64; 6] {
    let [[a, b], [c, d]] = t.linear;
    [a, b, c, d, t.translation[0], t.translation[1]]
}

fn affine_fit_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_param, mut worst_res) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let p = rng.random_range(3..=68);
        let pts: Vec<[f64; 2]> = (0..p)
            .map(|_| [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)])
            .collect();
        let src = Shape::from_points(&pts).unwrap();
        let truth = random_affine(&mut rng, 2.0);
        let dst = truth.apply_to_shape(&src);
        let (fit, res) = fit_affine_with_residual(&src, &dst).unwrap();
        let err = params(&fit)
            .iter()
            .zip(params(&truth))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_param = worst_param.max(err);
        worst_res = worst_res.max(res);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_param < 1e-7 && worst_res < 1e-14 && secs < 5.0,
        format!("max param error {worst_param:.2e}, max residual {worst_res:.2e}, {secs:.2} s"),
    )
}

fn best_permutation_agreement(labels: &[usize], truth: &[usize], k: usize) -> f64 {
    fn perms(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }
    perms(k)
        .iter()
        .map(|perm| labels.iter().zip(truth).filter(|(&a, &t)| perm[a] == t).count())
        .max()
        .unwrap() as f64
        / labels.len() as f64
}

fn clustering_properties(synth: &SynthModel, faces: &[SynthInstance]) -> Outcome {
    let shapes: Vec<Shape> = faces.iter().map(|f| f.shape.clone()).collect();
    let presets: Vec<usize> = faces.iter().map(|f| f.preset).collect();
    let (_, mean) = canonical_normalize(&shapes).unwrap();
    let constraints = ShapeConstraints::from_groups(&synth.constraint_groups(), &mean).unwrap();
    let g = synth.num_presets();
    let result = cluster_shapes(&shapes, g, TransformClass::Affine, &constraints, 5, 100).unwrap();

    let worst_rise = result
        .objective_trace
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let monotone = worst_rise <= 1e-9;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let warped: Vec<Shape> = shapes
        .iter()
        .map(|s| {
            let angle: f64 = rng.random_range(-0.6..0.6);
            let t = AffineTransform::translation(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0))
                .compose(&AffineTransform::rotation(angle))
                .compose(&AffineTransform::scaling(rng.random_range(0.6..1.6), rng.random_range(0.6..1.6)));
            t.apply_to_shape(s)
        })
        .collect();
    let again = cluster_shapes(&warped, g, TransformClass::Affine, &constraints, 5, 100).unwrap();
    let invariant = again.assignments == result.assignments;

    let violation = result
        .prototypes
        .iter()
        .map(|p| constraints.max_violation(p).unwrap())
        .fold(0.0, f64::max);
    let agreement = best_permutation_agreement(&result.assignments, &presets, g);
    outcome(
        monotone && invariant && violation < 1e-8 && agreement >= 0.95,
        format!(
            "largest objective rise {worst_rise:.2e}, warped assignments identical: {invariant}, \
             constraint violation {violation:.2e}, preset agreement {:.1}%",
            100.0 * agreement
        ),
    )
}

/// Plain Lloyd k-means with the documented seeding and empty-cluster rules.
fn lloyd_oracle(data: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Vec<usize> {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let first_max = |v: &[f64]| {
        let mut best = 0;
        for i in 1..v.len() {
            if v[i] > v[best] {
                best = i;
            }
        }
        best
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![data[rng.random_range(0..data.len())].clone()];
    let mut nearest: Vec<f64> = data.iter().map(|x| dist(x, &centers[0])).collect();
    while centers.len() < k {
        let c = data[first_max(&nearest)].clone();
        for (n, x) in nearest.iter_mut().zip(data) {
            *n = n.min(dist(x, &c));
        }
        centers.push(c);
    }
    let assign = |centers: &[Vec<f64>]| -> (Vec<usize>, Vec<f64>) {
        data.iter()
            .map(|x| {
                let mut best = (0, dist(x, &centers[0]));
                for (j, c) in centers.iter().enumerate().skip(1) {
                    let d = dist(x, c);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                best
            })
            .unzip()
    };
    let repair = |centers: &mut Vec<Vec<f64>>, labels: &mut Vec<usize>, errs: &mut Vec<f64>| loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&a| counts[a] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut worst: Option<usize> = None;
        for n in 0..data.len() {
            if counts[labels[n]] > 1 && worst.is_none_or(|w| errs[n] > errs[w]) {
                worst = Some(n);
            }
        }
        let n = worst.unwrap();
        centers[empty] = data[n].clone();
        labels[n] = empty;
        errs[n] = 0.0;
    };
    let (mut labels, mut errs) = assign(&centers);
    repair(&mut centers, &mut labels, &mut errs);
    for _ in 0..max_iter {
        for (j, c) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = data.iter().zip(&labels).filter(|(_, &a)| a == j).map(|(x, _)| x).collect();
            let mut sum = vec![0.0; c.len()];
            for m in &members {
                sum.iter_mut().zip(m.iter()).for_each(|(s, v)| *s += v);
            }
            *c = sum.iter().map(|s| s / members.len() as f64).collect();
        }
        let (mut next, mut next_errs) = assign(&centers);
        repair(&mut centers, &mut next, &mut next_errs);
        let done = next == labels;
        labels = next;
        if done {
            break;
        }
    }
    labels
}

fn identity_reduction(faces: &[SynthInstance]) -> Outcome {
    let shapes: Vec<Shape> = faces.iter().map(|f| f.shape.clone()).collect();
    let data: Vec<Vec<f64>> = shapes.iter().map(|s| s.as_slice().to_vec()).collect();
    let dim = data[0].len();
    let mut mismatches = 0;
    let cases = [(2, 0), (3, 1), (4, 2), (5, 3)];
    for &(k, seed) in &cases {
        let lib = cluster_shapes(&shapes, k, TransformClass::Identity, &ShapeConstraints::unconstrained(dim), seed, 100)
            .unwrap();
        if lib.assignments != lloyd_oracle(&data, k, seed, 100) {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{} of {} (k, seed) cases match the Lloyd oracle", cases.len() - mismatches, cases.len()),
    )
}

fn ridge_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gammas = [0.0, 1.0, 1e6, 1e-3, 10.0];
    let (mut worst_rel, mut worst_grad) = (0.0f64, 0.0f64);
    for trial in 0..50 {
        let gamma = gammas[trial % gammas.len()];
        let f = rng.random_range(1..12);
        let t = rng.random_range(1..5);
        let n = rng.random_range(f + 3..f + 40);
        let samples: Vec<WeightedSample> = (0..n)
            .map(|_| WeightedSample {
                features: (0..f).map(|_| rng.sample(StandardNormal)).collect(),
                target: (0..t).map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0).collect(),
                weight: rng.random_range(0.1..2.0),
            })
            .collect();
        let stage = fit_ridge(&samples, gamma).unwrap();

        let x = DMatrix::from_fn(n, f + 1, |i, j| if j < f { samples[i].features[j] } else { 1.0 });
        let y = DMatrix::from_fn(n, t, |i, j| samples[i].target[j]);
        let w = DMatrix::from_diagonal(&DVector::from_iterator(n, samples.iter().map(|s| s.weight)));
        let lhs = x.transpose() * &w * &x + DMatrix::identity(f + 1, f + 1) * gamma;
        let rhs = x.transpose() * &w * &y;
        let expected = lhs.lu().solve(&rhs).unwrap();
        let theta = stage_theta(&stage, f, t);
        worst_rel = worst_rel.max((&theta - &expected).norm() / expected.norm().max(1e-300));

        // ∇ = 2 (Xᵀ W (Xθ − Y) + γ θ) vanishes at the optimum.
        let grad = (x.transpose() * &w * (&x * &theta - &y) + &theta * gamma) * 2.0;
        worst_grad = worst_grad.max(grad.norm() / rhs.norm().max(1.0));
    }
    outcome(
        worst_rel < 1e-8 && worst_grad < 1e-8,
        format!("max relative error {worst_rel:.2e}, max relative gradient {worst_grad:.2e}"),
    )
}

fn stage_theta(stage: &RegressionStage, f: usize, t: usize) -> DMatrix<f64> {
    DMatrix::from_fn(f + 1, t, |j, o| if j < f { stage.weight(o, j) } else { stage.bias()[o] })
}

fn training_samples(faces: &[SynthInstance]) -> Vec<TrainingSample> {
    faces
        .iter()
        .map(|i| TrainingSample {
            image: i.image.clone(),
            shape: i.shape.clone(),
            bbox: Some(i.bbox),
        })
        .collect()
}

/// A reduced training run shared by the alignment-level checks.
fn small_config(lambda: f64) -> TrainConfig {
    TrainConfig {
        perturbations: 5,
        max_stages: 3,
        gamma_grid: vec![1e-2, 1e-1, 1.0, 10.0, 100.0],
        lambda,
        temperature: benchmark_config().temperature,
        seed: 21,
        ..TrainConfig::default()
    }
}

fn equivariance(model: &MixModel, tests: &[SynthInstance]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut total = 0.0;
    let mut worst = 0.0f64;
    for inst in tests {
        let (w, h) = (inst.image.width(), inst.image.height());
        let c = [w as f64 / 2.0, h as f64 / 2.0];
        let scale = rng.random_range(0.85..1.15);
        let t = AffineTransform::translation(c[0] + rng.random_range(-8.0..8.0), c[1] + rng.random_range(-8.0..8.0))
            .compose(&AffineTransform::rotation(rng.random_range(-20f64..20.0).to_radians()))
            .compose(&AffineTransform::scaling(scale, scale * rng.random_range(0.95..1.05)))
            .compose(&AffineTransform::translation(-c[0], -c[1]));
        let moved = warp_image(&t, &inst.image, w, h).unwrap();
        let init = init_from_bbox(&inst.bbox, model).unwrap();
        let (out, _) = mix_align(&inst.image, &init, model).unwrap();
        let (out_moved, _) = mix_align(&moved, &t.apply_to_shape(&init), model).unwrap();
        let d = out_moved.mean_point_distance(&t.apply_to_shape(&out)).unwrap();
        total += d;
        worst = worst.max(d);
    }
    let mean = total / tests.len() as f64;
    outcome(
        mean < 0.5,
        format!("mean discrepancy {mean:.4} px over {} images (worst {worst:.4} px)", tests.len()),
    )
}

fn ablation(synth: &SynthModel) -> Outcome {
    let start = Instant::now();
    let cfg = benchmark_config();
    let train_set = training_samples(&sample_many(synth, 500, 2 * cfg.seed).unwrap());
    let test_set = sample_many(synth, 200, 2 * cfg.seed + 1).unwrap();
    let eval: Vec<EvalSample> = test_set
        .iter()
        .map(|i| EvalSample {
            image: &i.image,
            shape: &i.shape,
            bbox: i.bbox,
        })
        .collect();
    let rows = run_ablation(
        &train_set,
        &eval,
        &cfg,
        &standard_variants(),
        &[0.1],
        &synth.left_pupil(),
        &synth.right_pupil(),
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let v: Vec<f64> = rows.iter().map(|r| r.nauc[0]).collect();
    let (sdm, ti, mix, mix_c) = (v[0], v[1], v[2], v[3]);
    let ordered = mix_c >= mix && mix >= ti && ti >= sdm;
    let table: Vec<String> = rows.iter().map(|r| format!("{} {:.4}", r.label, r.nauc[0])).collect();
    outcome(
        ordered && mix - sdm >= 0.03 && secs < 900.0,
        format!("NAUC0.1: {}; MIX - SDM {:+.4}; {secs:.0} s", table.join(", "), mix - sdm),
    )
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

fn constraint_rescue(with: &MixModel, without: &MixModel, tests: &[SynthInstance]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut err_with, mut err_without) = (Vec::new(), Vec::new());
    for inst in tests {
        let p = inst.shape.num_points();
        let a = rng.random_range(0..p);
        let b = (a + rng.random_range(1..p)) % p;
        let c = inst.bbox.center();
        let reach = 0.75 * inst.bbox.larger_side();
        let displaced = |model: &MixModel| -> f64 {
            let init = init_from_bbox(&inst.bbox, model).unwrap();
            let mut coords = init.as_slice().to_vec();
            for &i in &[a, b] {
                let [x, y] = init.point(i);
                let (dx, dy) = (x - c[0], y - c[1]);
                let norm = (dx * dx + dy * dy).sqrt().max(1e-9);
                coords[2 * i] = c[0] + reach * dx / norm;
                coords[2 * i + 1] = c[1] + reach * dy / norm;
            }
            let (out, _) = mix_align(&inst.image, &Shape::new(coords).unwrap(), model).unwrap();
            [a, b]
                .iter()
                .map(|&i| {
                    let ([ox, oy], [gx, gy]) = (out.point(i), inst.shape.point(i));
                    ((ox - gx).powi(2) + (oy - gy).powi(2)).sqrt()
                })
                .sum::<f64>()
                / 2.0
        };
        err_with.push(displaced(with));
        err_without.push(displaced(without));
    }
    let (m_with, m_without) = (median(err_with), median(err_without));
    outcome(
        m_with < m_without,
        format!("median displaced-landmark error {m_with:.3} px with constraint, {m_without:.3} px without"),
    )
}

fn nauc_examples() -> Outcome {
    let a = nauc(&[0.05, 0.15], 0.2).unwrap();
    let b = nauc(&[0.0; 7], 0.1).unwrap();
    let c = nauc(&[0.3, 0.5, 2.0], 0.2).unwrap();
    outcome(
        a == 0.5 && b == 1.0 && c == 0.0,
        format!("{{0.05, 0.15}} -> {a}, all zero -> {b}, all above -> {c}"),
    )
}

fn persistence(model: &MixModel, inst: &SynthInstance) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.mix");
    save_model(&path, model).unwrap();
    let loaded = load_model(&path).unwrap();
    let init = init_from_bbox(&inst.bbox, model).unwrap();
    let (a, ta) = mix_align(&inst.image, &init, model).unwrap();
    let (b, tb) = mix_align(&inst.image, &init, &loaded).unwrap();
    let identical = a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()) && ta == tb;

    let bytes = encode_model(model);
    let mut bumped = bytes.clone();
    bumped[4..8].copy_from_slice(&(MODEL_VERSION + 1).to_le_bytes());
    let version = matches!(decode_model(&bumped), Err(Error::VersionMismatch { .. }));
    let truncated = matches!(decode_model(&bytes[..bytes.len() / 2]), Err(Error::CorruptModel(_)));
    let mut magic = bytes.clone();
    magic[0] ^= 0xff;
    let bad_magic = matches!(decode_model(&magic), Err(Error::CorruptModel(_)));
    let mut trailing = bytes;
    trailing.push(0);
    let trailing = matches!(decode_model(&trailing), Err(Error::CorruptModel(_)));
    outcome(
        identical && version && truncated && bad_magic && trailing,
        format!(
            "bit-identical: {identical}; version bump rejected: {version}; truncation: {truncated}; \
             bad magic: {bad_magic}; trailing bytes: {trailing}"
        ),
    )
}

fn gating(model: &MixModel) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut worst_sum, mut min_entry) = (0.0f64, f64::INFINITY);
    let l = model.num_experts();
    for _ in 0..10_000 {
        let proto = &model.experts[rng.random_range(0..l)].prototype;
        let noise: Vec<f64> = (0..proto.as_slice().len())
            .map(|_| rng.sample::<f64, _>(StandardNormal) * rng.random_range(0.0..30.0))
            .collect();
        let s = random_affine(&mut rng, 3.0).apply_to_shape(&proto.displaced(&noise).unwrap());
        let g = gating_weights(&s, model).unwrap();
        worst_sum = worst_sum.max((g.iter().sum::<f64>() - 1.0).abs());
        min_entry = g.iter().copied().fold(min_entry, f64::min);
    }
    let pair = softmax_gating(&[0.0, 3f64.ln()], 1.0);
    let pair_ok = (pair[0] - 0.75).abs() < 1e-12 && (pair[1] - 0.25).abs() < 1e-12;
    outcome(
        worst_sum < 1e-12 && min_entry >= 0.0 && pair_ok,
        format!(
            "max |sum - 1| {worst_sum:.2e}, min weight {min_entry:.2e}, (0, ln 3) -> ({:.15}, {:.15})",
            pair[0], pair[1]
        ),
    )
}

fn main() {
    let synth = SynthModel::new(20, 3).unwrap();
    let faces = sample_many(&synth, 200, 100).unwrap();
    let train_faces = training_samples(&sample_many(&synth, 200, 101).unwrap());
    let tests = sample_many(&synth, 50, 102).unwrap();

    let model = train(&train_faces, &small_config(1.0)).unwrap();
    let unconstrained = train(&train_faces, &small_config(0.0)).unwrap();

    let results = [
        ("affine-fit oracle", affine_fit_oracle()),
        ("clustering monotonicity and invariance", clustering_properties(&synth, &faces)),
        ("identity reduction", identity_reduction(&faces)),
        ("ridge oracle", ridge_oracle()),
        ("cascade equivariance", equivariance(&model, &tests)),
        ("ablation ordering", ablation(&synth)),
        ("deformation-constraint rescue", constraint_rescue(&model, &unconstrained, &tests)),
        ("NAUC examples", nauc_examples()),
        ("persistence", persistence(&model, &tests[0])),
        ("gating simplex", gating(&model)),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("{} {:2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
