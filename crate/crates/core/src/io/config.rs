//! `key = value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! errors so typos do not silently fall back to defaults.

use std::path::Path;

use crate::cascade::{FeatureMode, TrainConfig};
use crate::clustering::{ConstraintGroup, TransformClass};
use crate::error::{Error, Result};

/// Non-empty, non-comment lines as `(line number, key, value)`.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(i + 1, format!("expected 'key = value', found {line:?}")))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::parse(i + 1, "empty key"));
        }
        out.push((i + 1, key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::parse(line, format!("invalid value {v:?} for {key}")))
}

fn real(line: usize, key: &str, v: &str) -> Result<f64> {
    let x: f64 = num(line, key, v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::parse(line, format!("{key} must be finite")))
    }
}

/// `xy: 0 1 2`, `x: 3 4`, or `y: 5 6`.
fn parse_group(line: usize, v: &str) -> Result<ConstraintGroup> {
    let (axes, idx) = v
        .split_once(':')
        .ok_or_else(|| Error::parse(line, "constraint_group must look like 'xy: 0 1 2'"))?;
    let (pin_x, pin_y) = match axes.trim() {
        "x" => (true, false),
        "y" => (false, true),
        "xy" => (true, true),
        a => return Err(Error::parse(line, format!("unknown constraint axes {a:?}"))),
    };
    let indices = idx
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| num::<usize>(line, "constraint_group", t))
        .collect::<Result<Vec<_>>>()?;
    if indices.is_empty() {
        return Err(Error::parse(line, "constraint_group lists no landmarks"));
    }
    Ok(ConstraintGroup { indices, pin_x, pin_y })
}

/// Applies `key = value` text on top of `base`.
pub fn parse_train_config(text: &str, base: TrainConfig) -> Result<TrainConfig> {
    let mut c = base;
    let mut groups_seen = false;
    for (n, key, v) in parse_pairs(text)? {
        let v = v.as_str();
        match key.as_str() {
            "transform" => {
                c.transform = match v {
                    "affine" => TransformClass::Affine,
                    "identity" => TransformClass::Identity,
                    _ => return Err(Error::parse(n, format!("transform must be affine or identity, got {v:?}"))),
                }
            }
            "experts" => c.num_experts = num(n, &key, v)?,
            "feature_mode" => {
                c.feature_mode = match v {
                    "constrained" => FeatureMode::Constrained,
                    "plain" => FeatureMode::Plain,
                    _ => return Err(Error::parse(n, format!("feature_mode must be constrained or plain, got {v:?}"))),
                }
            }
            "lambda" => c.lambda = real(n, &key, v)?,
            "temperature" => c.temperature = real(n, &key, v)?,
            "perturbations" => c.perturbations = num(n, &key, v)?,
            "max_stages" => c.max_stages = num(n, &key, v)?,
            "fine_stages" => c.fine_stages = num(n, &key, v)?,
            "pca_modes" => c.pca_modes = num(n, &key, v)?,
            "sigma_pca" => c.sigmas.pca = real(n, &key, v)?,
            "sigma_rotation_deg" => c.sigmas.rotation_deg = real(n, &key, v)?,
            "sigma_translation" => c.sigmas.translation = real(n, &key, v)?,
            "sigma_anisotropic" => c.sigmas.anisotropic = real(n, &key, v)?,
            "sigma_iid" => c.sigmas.iid = real(n, &key, v)?,
            "fine_sigma" => c.fine_sigma = real(n, &key, v)?,
            "trim_fraction" => c.trim_fraction = real(n, &key, v)?,
            "gamma_grid" => {
                c.gamma_grid = v
                    .split(',')
                    .map(|t| real(n, &key, t.trim()))
                    .collect::<Result<Vec<_>>>()?
            }
            "cluster_iters" => c.cluster_iters = num(n, &key, v)?,
            "stop_ratio" => c.stop_ratio = real(n, &key, v)?,
            "seed" => c.seed = num(n, &key, v)?,
            "constraint_group" => {
                if !groups_seen {
                    c.constraint_groups.clear();
                    groups_seen = true;
                }
                c.constraint_groups.push(parse_group(n, v)?);
            }
            "patch_cells" => c.descriptor.patch_cells = num(n, &key, v)?,
            "orientation_bins" => c.descriptor.orientation_bins = num(n, &key, v)?,
            "patch_radius" => c.descriptor.patch_radius = real(n, &key, v)?,
            "clip_threshold" => c.descriptor.clip_threshold = real(n, &key, v)?,
            _ => return Err(Error::parse(n, format!("unknown key {key:?}"))),
        }
    }
    c.validate()?;
    Ok(c)
}

pub fn load_train_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    parse_train_config(&super::text::read_text(path.as_ref())?, TrainConfig::default())
}

/// Prints every field so that parsing the text reproduces `c` exactly.
pub fn config_to_string(c: &TrainConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
    kv(
        "transform",
        match c.transform {
            TransformClass::Affine => "affine",
            TransformClass::Identity => "identity",
        }
        .into(),
    );
    kv("experts", c.num_experts.to_string());
    kv(
        "feature_mode",
        match c.feature_mode {
            FeatureMode::Constrained => "constrained",
            FeatureMode::Plain => "plain",
        }
        .into(),
    );
    kv("lambda", format!("{:?}", c.lambda));
    kv("temperature", format!("{:?}", c.temperature));
    kv("perturbations", c.perturbations.to_string());
    kv("max_stages", c.max_stages.to_string());
    kv("fine_stages", c.fine_stages.to_string());
    kv("pca_modes", c.pca_modes.to_string());
    kv("sigma_pca", format!("{:?}", c.sigmas.pca));
    kv("sigma_rotation_deg", format!("{:?}", c.sigmas.rotation_deg));
    kv("sigma_translation", format!("{:?}", c.sigmas.translation));
    kv("sigma_anisotropic", format!("{:?}", c.sigmas.anisotropic));
    kv("sigma_iid", format!("{:?}", c.sigmas.iid));
    kv("fine_sigma", format!("{:?}", c.fine_sigma));
    kv("trim_fraction", format!("{:?}", c.trim_fraction));
    let grid: Vec<String> = c.gamma_grid.iter().map(|g| format!("{g:?}")).collect();
    kv("gamma_grid", grid.join(", "));
    kv("cluster_iters", c.cluster_iters.to_string());
    kv("stop_ratio", format!("{:?}", c.stop_ratio));
    kv("seed", c.seed.to_string());
    for g in &c.constraint_groups {
        let axes = match (g.pin_x, g.pin_y) {
            (true, true) => "xy",
            (true, false) => "x",
            _ => "y",
        };
        let idx: Vec<String> = g.indices.iter().map(|i| i.to_string()).collect();
        kv("constraint_group", format!("{axes}: {}", idx.join(" ")));
    }
    kv("patch_cells", c.descriptor.patch_cells.to_string());
    kv("orientation_bins", c.descriptor.orientation_bins.to_string());
    kv("patch_radius", format!("{:?}", c.descriptor.patch_radius));
    kv("clip_threshold", format!("{:?}", c.descriptor.clip_threshold));
    s
}

/// Settings for generating a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub points: usize,
    pub presets: usize,
    pub train: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            points: 20,
            presets: 3,
            train: 500,
            test: 200,
            seed: 0,
        }
    }
}

pub fn parse_synth_config(text: &str) -> Result<SynthConfig> {
    let mut c = SynthConfig::default();
    for (n, key, v) in parse_pairs(text)? {
        match key.as_str() {
            "points" => c.points = num(n, &key, &v)?,
            "presets" => c.presets = num(n, &key, &v)?,
            "train" => c.train = num(n, &key, &v)?,
            "test" => c.test = num(n, &key, &v)?,
            "seed" => c.seed = num(n, &key, &v)?,
            _ => return Err(Error::parse(n, format!("unknown key {key:?}"))),
        }
    }
    Ok(c)
}

pub fn load_synth_config(path: impl AsRef<Path>) -> Result<SynthConfig> {
    parse_synth_config(&super::text::read_text(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_config_parses_back_identically() {
        let mut c = TrainConfig {
            lambda: 0.1 + 0.2,
            seed: 77,
            gamma_grid: vec![0.0, 1e-3, 12.5],
            constraint_groups: vec![
                ConstraintGroup {
                    indices: vec![0, 1, 2],
                    pin_x: true,
                    pin_y: true,
                },
                ConstraintGroup {
                    indices: vec![14, 17],
                    pin_x: false,
                    pin_y: true,
                },
            ],
            ..TrainConfig::default()
        };
        c.sigmas.rotation_deg = 7.25;
        let back = parse_train_config(&config_to_string(&c), TrainConfig::default()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_names_its_line() {
        let err = parse_train_config("lambda = 2\n\nlamda = 3\n", TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn comments_and_whitespace_are_ignored() {
        let c = parse_train_config("# tuned\n  experts=2  \nfeature_mode = plain\n", TrainConfig::default()).unwrap();
        assert_eq!(c.num_experts, 2);
        assert_eq!(c.feature_mode, FeatureMode::Plain);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(parse_train_config("trim_fraction = 1.5", TrainConfig::default()).is_err());
        assert!(parse_train_config("lambda = nan", TrainConfig::default()).is_err());
        assert!(parse_train_config("constraint_group = z: 1", TrainConfig::default()).is_err());
    }
}
