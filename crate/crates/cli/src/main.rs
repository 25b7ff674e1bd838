use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mixalign::cascade::{init_from_bbox, mix_align, train_with_report, TrainConfig};
use mixalign::clustering::{cluster_shapes, ShapeConstraints, TransformClass};
use mixalign::evaluation::{
    benchmark_config, cdf_points, default_pupils, evaluate, format_table, nauc_row, run_ablation, standard_variants, EvalSample,
};
use mixalign::geometry::{canonical_normalize, Rect, Shape};
use mixalign::io::{
    config_to_string, format_pts, load_corpus, load_image, load_model, load_synth_config, load_train_config,
    make_benchmark, parse_bbox, parse_train_config, save_model, write_pts, AnnotatedSample,
};
use mixalign::synth::{sample_many, SynthModel};
use mixalign::{Error, Result};

#[derive(Parser)]
#[command(name = "mixalign", version, about = "Face landmark alignment with a mixture of invariant cascaded-regression experts")]
struct Cli {
    /// Seed for every random choice; overrides any seed in a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on an annotated corpus.
    Train {
        /// `key = value` training configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Align one image from a bounding box and print the landmarks as `.pts`.
    Align {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// A bounding-box file or `left,top,right,bottom`.
        #[arg(long)]
        bbox: String,
        /// Write the result here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report the per-stage gating weights and shapes on standard error.
        #[arg(long)]
        trace: bool,
    },
    /// Cluster the corpus shapes into prototypes.
    Cluster {
        #[arg(long)]
        data: PathBuf,
        #[arg(short = 'L', long = "experts")]
        experts: usize,
        /// Config text whose `constraint_group` lines pin prototype landmarks.
        #[arg(long)]
        constraints: Option<PathBuf>,
        /// Compare raw shapes instead of affine-aligned ones.
        #[arg(long)]
        euclidean: bool,
        #[arg(long, default_value_t = 50)]
        max_iter: usize,
        /// Directory for `prototype_<l>.pts` files and `assignments.csv`;
        /// assignments go to standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a model on a corpus; CSV rows `record,key,value`.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
        alphas: Vec<f64>,
        /// Landmarks averaged into the left pupil centre (default by point count).
        #[arg(long, value_delimiter = ',')]
        left_pupil: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        right_pupil: Option<Vec<usize>>,
    },
    /// Write a synthetic train/test corpus.
    Synth {
        /// Keys: points, presets, train, test, seed.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score SDM, TI-SDM and MIX variants on synthetic faces.
    Bench {
        #[arg(long, default_value_t = 500)]
        train: usize,
        #[arg(long, default_value_t = 200)]
        test: usize,
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long, default_value_t = 3)]
        presets: usize,
        /// Base training configuration shared by every variant (default: the
        /// library benchmark settings).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
        alphas: Vec<f64>,
    },
}

fn train_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => load_train_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn bbox_arg(arg: &str) -> Result<Rect> {
    let path = Path::new(arg);
    if path.exists() {
        mixalign::io::load_bbox(path)
    } else {
        parse_bbox(arg)
    }
}

fn eval_samples(corpus: &[AnnotatedSample]) -> Result<Vec<EvalSample<'_>>> {
    corpus
        .iter()
        .map(|s| {
            let bbox = s.bbox.ok_or_else(|| {
                Error::InvalidArg(format!("sample {} has no bounding box", s.source))
            })?;
            Ok(EvalSample {
                image: &s.image,
                shape: &s.shape,
                bbox,
            })
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, data, out } => {
            let cfg = train_config(config.as_deref(), cli.seed)?;
            let corpus = load_corpus(&data)?;
            let samples: Vec<_> = corpus.iter().map(AnnotatedSample::to_training).collect();
            let (model, report) = train_with_report(&samples, &cfg)?;
            save_model(&out, &model)?;
            eprintln!(
                "trained {} expert(s) x {} stage(s) on {} images; stage CV errors {:?}",
                model.num_experts(),
                model.num_stages(),
                samples.len(),
                report.cv_errors
            );
        }
        Command::Align {
            model,
            image,
            bbox,
            out,
            trace,
        } => {
            let model = load_model(&model)?;
            let img = load_image(&image)?;
            let init = init_from_bbox(&bbox_arg(&bbox)?, &model)?;
            let (shape, tr) = mix_align(&img, &init, &model)?;
            if trace {
                for (k, (g, s)) in tr.gatings.iter().zip(&tr.shapes[1..]).enumerate() {
                    let shift = s.mean_point_distance(&tr.shapes[k])?;
                    let g: Vec<String> = g.iter().map(|v| format!("{v:.6}")).collect();
                    eprintln!("stage {} gating [{}] mean_shift {shift:.4}", k + 1, g.join(", "));
                }
            }
            match out {
                Some(p) => write_pts(p, &shape)?,
                None => print!("{}", format_pts(&shape)),
            }
        }
        Command::Cluster {
            data,
            experts,
            constraints,
            euclidean,
            max_iter,
            out,
        } => {
            let corpus = load_corpus(&data)?;
            let shapes: Vec<Shape> = corpus.iter().map(|s| s.shape.clone()).collect();
            let (canonical, mean) = canonical_normalize(&shapes)?;
            let seed = cli.seed.unwrap_or(0);
            let result = if euclidean {
                mixalign::clustering::cluster_shapes_euclidean(&canonical, experts, seed, max_iter)?
            } else {
                let groups = match constraints {
                    Some(p) => {
                        let text = std::fs::read_to_string(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
                        parse_train_config(&text, TrainConfig::default())?.constraint_groups
                    }
                    None => Vec::new(),
                };
                let c = if groups.is_empty() {
                    ShapeConstraints::anchor_points(&mean)?
                } else {
                    ShapeConstraints::from_groups(&groups, &mean)?
                };
                cluster_shapes(&canonical, experts, TransformClass::Affine, &c, seed, max_iter)?
            };
            let mut csv = String::from("sample,cluster\n");
            for (s, a) in corpus.iter().zip(&result.assignments) {
                writeln!(csv, "{},{}", s.source, a + 1).unwrap();
            }
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
                    for (l, p) in result.prototypes.iter().enumerate() {
                        write_pts(dir.join(format!("prototype_{}.pts", l + 1)), p)?;
                    }
                    let path = dir.join("assignments.csv");
                    std::fs::write(&path, csv).map_err(|e| Error::Io { path, source: e })?;
                }
                None => print!("{csv}"),
            }
            eprintln!(
                "{} iterations, converged: {}, objective {:.6e}",
                result.iterations,
                result.converged,
                result.objective_trace.last().copied().unwrap_or(0.0)
            );
        }
        Command::Eval {
            model,
            data,
            alphas,
            left_pupil,
            right_pupil,
        } => {
            let model = load_model(&model)?;
            let corpus = load_corpus(&data)?;
            let (dl, dr) = default_pupils(model.num_points())?;
            let (lp, rp) = (left_pupil.unwrap_or(dl), right_pupil.unwrap_or(dr));
            let errors = evaluate(&model, &eval_samples(&corpus)?, &lp, &rp)?;
            let mut csv = String::from("record,key,value\n");
            for (s, e) in corpus.iter().zip(&errors) {
                writeln!(csv, "image,{},{e}", s.source).unwrap();
            }
            let finite: Vec<f64> = errors.iter().map(|e| if e.is_finite() { *e } else { f64::MAX }).collect();
            for (e, f) in cdf_points(&finite)? {
                writeln!(csv, "cdf,{e},{f}").unwrap();
            }
            for (a, v) in alphas.iter().zip(nauc_row(&errors, &alphas)?) {
                writeln!(csv, "nauc,{a},{v}").unwrap();
            }
            print!("{csv}");
        }
        Command::Synth { config, out } => {
            let mut cfg = match config {
                Some(p) => load_synth_config(p)?,
                None => Default::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let model = SynthModel::new(cfg.points, cfg.presets)?;
            make_benchmark(&model, cfg.train, cfg.test, cfg.seed, &out)?;
        }
        Command::Bench {
            train,
            test,
            points,
            presets,
            config,
            alphas,
        } => {
            let mut cfg = match config {
                Some(p) => load_train_config(p)?,
                None => benchmark_config(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let synth = SynthModel::new(points, presets)?;
            let (train_seed, test_seed) = mixalign::io::benchmark_seeds(cfg.seed);
            let train_set: Vec<_> = sample_many(&synth, train, train_seed)?
                .into_iter()
                .map(|i| mixalign::cascade::TrainingSample {
                    image: i.image,
                    shape: i.shape,
                    bbox: Some(i.bbox),
                })
                .collect();
            let test_set = sample_many(&synth, test, test_seed)?;
            let eval: Vec<EvalSample> = test_set
                .iter()
                .map(|i| EvalSample {
                    image: &i.image,
                    shape: &i.shape,
                    bbox: i.bbox,
                })
                .collect();
            eprint!("{}", config_to_string(&cfg));
            let rows = run_ablation(
                &train_set,
                &eval,
                &cfg,
                &standard_variants(),
                &alphas,
                &synth.left_pupil(),
                &synth.right_pupil(),
            )?;
            for r in &rows {
                eprintln!(
                    "{}: {:.1} s, stage CV errors {:?}, fine {:?}, gammas {:?}",
                    r.label, r.seconds, r.report.cv_errors, r.report.fine_cv_errors, r.report.gammas
                );
            }
            print!("{}", format_table(&rows, &alphas));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
