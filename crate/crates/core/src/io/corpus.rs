//! Annotated image directories.
//!
//! A corpus directory holds `manifest.txt` with one sample stem per line
//! (`#` comments allowed) and, per stem, `<stem>.pgm`, `<stem>.pts`, and an
//! optional `<stem>.bbox`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::pgm::{load_image, write_image};
use super::text::{load_bbox, load_pts, read_text, write_atomic, write_bbox, write_pts};
use crate::cascade::TrainingSample;
use crate::error::{Error, Result};
use crate::geometry::{GrayImage, Rect, Shape};
use crate::synth::{sample_many, SynthModel};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSample {
    pub image_path: PathBuf,
    pub image: GrayImage,
    pub shape: Shape,
    pub bbox: Option<Rect>,
    /// Manifest stem the sample was loaded from.
    pub source: String,
}

impl AnnotatedSample {
    pub fn to_training(&self) -> TrainingSample {
        TrainingSample {
            image: self.image.clone(),
            shape: self.shape.clone(),
            bbox: self.bbox,
        }
    }
}

pub fn read_manifest(dir: &Path) -> Result<Vec<String>> {
    let text = read_text(&dir.join(MANIFEST))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().next().unwrap().to_string())
        .collect())
}

/// Loads every sample listed in `dir/manifest.txt`; all shapes must have
/// the same landmark count.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<AnnotatedSample>> {
    let dir = dir.as_ref();
    let stems = read_manifest(dir)?;
    let samples = stems
        .par_iter()
        .map(|stem| {
            let image_path = dir.join(format!("{stem}.pgm"));
            let image = load_image(&image_path)?;
            let shape = load_pts(dir.join(format!("{stem}.pts")))?;
            let bbox_path = dir.join(format!("{stem}.bbox"));
            let bbox = if bbox_path.exists() { Some(load_bbox(&bbox_path)?) } else { None };
            Ok(AnnotatedSample {
                image_path,
                image,
                shape,
                bbox,
                source: stem.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = samples.first() {
        for s in &samples[1..] {
            if s.shape.num_points() != first.shape.num_points() {
                return Err(Error::MismatchedCount {
                    expected: first.shape.num_points(),
                    found: s.shape.num_points(),
                });
            }
        }
    }
    Ok(samples)
}

/// Writes images, annotations, boxes and the manifest into `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, items: &[(String, GrayImage, Shape, Option<Rect>)]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    items.par_iter().try_for_each(|(stem, img, shape, bbox)| -> Result<()> {
        write_image(dir.join(format!("{stem}.pgm")), img)?;
        write_pts(dir.join(format!("{stem}.pts")), shape)?;
        if let Some(b) = bbox {
            write_bbox(dir.join(format!("{stem}.bbox")), b)?;
        }
        Ok(())
    })?;
    let manifest: String = items.iter().map(|(stem, ..)| format!("{stem}\n")).collect();
    write_atomic(&dir.join(MANIFEST), manifest.as_bytes())
}

/// Seeds used for the train and test halves of a benchmark; always distinct.
pub fn benchmark_seeds(seed: u64) -> (u64, u64) {
    let base = seed.wrapping_mul(2);
    (base, base.wrapping_add(1))
}

/// Generates `out/train` and `out/test` synthetic corpora.
pub fn make_benchmark(model: &SynthModel, n_train: usize, n_test: usize, seed: u64, out: impl AsRef<Path>) -> Result<()> {
    let out = out.as_ref();
    let (train_seed, test_seed) = benchmark_seeds(seed);
    for (name, n, s) in [("train", n_train, train_seed), ("test", n_test, test_seed)] {
        let items: Vec<_> = sample_many(model, n, s)?
            .into_iter()
            .enumerate()
            .map(|(i, inst)| (format!("face_{i:05}"), inst.image, inst.shape, Some(inst.bbox)))
            .collect();
        write_corpus(out.join(name), &items)?;
    }
    Ok(())
}
