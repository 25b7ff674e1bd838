//! Binary model container.
//!
//! Layout, all integers and floats little-endian: magic `MIXM`, `u32`
//! version, descriptor parameters, feature mode and transform tags, `λ`,
//! `τ`, frame scale, mean shape, reference box, experts (prototype and
//! stages), then the training-config echo. Arrays are `u64` length
//! followed by their elements. Trailing bytes are rejected.

use std::path::Path;

use crate::cascade::{Expert, FeatureMode, MixModel};
use crate::clustering::TransformClass;
use crate::error::{Error, Result};
use crate::features::DescriptorParams;
use crate::geometry::{Rect, Shape};
use crate::regression::RegressionStage;

pub const MODEL_MAGIC: &[u8; 4] = b"MIXM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.f64(x));
    }
    fn bytes(&mut self, v: &[u8]) {
        self.u64(v.len() as u64);
        self.0.extend_from_slice(v);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptModel(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(corrupt(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn count(&mut self, elem_size: usize, what: &str) -> Result<usize> {
        let n = self.u64(what)?;
        let remaining = (self.buf.len() - self.pos) / elem_size.max(1);
        if n > remaining as u64 {
            return Err(corrupt(format!("{what} declares {n} elements but the file is shorter")));
        }
        Ok(n as usize)
    }
    fn f64s(&mut self, what: &str) -> Result<Vec<f64>> {
        let n = self.count(8, what)?;
        (0..n).map(|_| self.f64(what)).collect()
    }
    fn bytes(&mut self, what: &str) -> Result<&'a [u8]> {
        let n = self.count(1, what)?;
        self.take(n, what)
    }
}

pub fn encode_model(model: &MixModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(MODEL_MAGIC);
    w.0.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    let d = &model.descriptor;
    w.u64(d.patch_cells as u64);
    w.u64(d.orientation_bins as u64);
    w.f64(d.patch_radius);
    w.f64(d.clip_threshold);
    w.u8(match model.feature_mode {
        FeatureMode::Plain => 0,
        FeatureMode::Constrained => 1,
    });
    w.u8(match model.transform {
        TransformClass::Identity => 0,
        TransformClass::Affine => 1,
    });
    w.f64(model.lambda);
    w.f64(model.temperature);
    w.f64(model.frame_scale);
    w.f64s(model.mean_shape.as_slice());
    let r = &model.reference_box;
    [r.left, r.top, r.right, r.bottom].iter().for_each(|&v| w.f64(v));
    w.u64(model.experts.len() as u64);
    for e in &model.experts {
        w.f64s(e.prototype.as_slice());
        w.u64(e.stages.len() as u64);
        for s in &e.stages {
            w.u64(s.input_len() as u64);
            w.f64s(s.weights());
            w.f64s(s.bias());
            w.f64(s.gamma_used);
            w.f64(s.lambda_used);
        }
    }
    w.bytes(model.config_echo.as_bytes());
    w.0
}

fn shape(values: Vec<f64>, what: &str) -> Result<Shape> {
    Shape::new(values).map_err(|e| corrupt(format!("{what}: {e}")))
}

pub fn decode_model(bytes: &[u8]) -> Result<MixModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MODEL_MAGIC {
        return Err(corrupt("missing MIXM magic"));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let small = |v: u64, what: &str| -> Result<usize> {
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= 1 << 16)
            .ok_or_else(|| corrupt(format!("{what} {v} out of range")))
    };
    let descriptor = DescriptorParams {
        patch_cells: small(r.u64("patch cells")?, "patch cells")?,
        orientation_bins: small(r.u64("orientation bins")?, "orientation bins")?,
        patch_radius: r.f64("patch radius")?,
        clip_threshold: r.f64("clip threshold")?,
    };
    let feature_mode = match r.u8("feature mode")? {
        0 => FeatureMode::Plain,
        1 => FeatureMode::Constrained,
        t => return Err(corrupt(format!("unknown feature mode tag {t}"))),
    };
    let transform = match r.u8("transform")? {
        0 => TransformClass::Identity,
        1 => TransformClass::Affine,
        t => return Err(corrupt(format!("unknown transform tag {t}"))),
    };
    let lambda = r.f64("lambda")?;
    let temperature = r.f64("temperature")?;
    let frame_scale = r.f64("frame scale")?;
    let mean_shape = shape(r.f64s("mean shape")?, "mean shape")?;
    let b = [r.f64("box")?, r.f64("box")?, r.f64("box")?, r.f64("box")?];
    let reference_box = Rect::new(b[0], b[1], b[2], b[3]).map_err(|e| corrupt(format!("reference box: {e}")))?;
    let n_experts = r.count(8, "expert count")?;
    let mut experts = Vec::with_capacity(n_experts);
    for _ in 0..n_experts {
        let prototype = shape(r.f64s("prototype")?, "prototype")?;
        let n_stages = r.count(8, "stage count")?;
        let mut stages = Vec::with_capacity(n_stages);
        for _ in 0..n_stages {
            let n_in = r.u64("stage input length")?;
            let n_in = usize::try_from(n_in).map_err(|_| corrupt("stage input length out of range"))?;
            let weights = r.f64s("stage weights")?;
            let bias = r.f64s("stage bias")?;
            let mut stage = RegressionStage::new(weights, bias, n_in).map_err(|e| corrupt(format!("stage: {e}")))?;
            stage.gamma_used = r.f64("gamma")?;
            stage.lambda_used = r.f64("stage lambda")?;
            stages.push(stage);
        }
        experts.push(Expert { prototype, stages });
    }
    let config_echo = String::from_utf8(r.bytes("config echo")?.to_vec())
        .map_err(|_| corrupt("config echo is not UTF-8"))?;
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let model = MixModel {
        experts,
        descriptor,
        feature_mode,
        transform,
        lambda,
        temperature,
        frame_scale,
        mean_shape,
        reference_box,
        config_echo,
    };
    model.validate().map_err(|e| corrupt(format!("inconsistent model: {e}")))?;
    Ok(model)
}

/// Writes the model atomically (temporary file, then rename).
pub fn save_model(path: impl AsRef<Path>, model: &MixModel) -> Result<()> {
    model.validate()?;
    super::text::write_atomic(path.as_ref(), &encode_model(model))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MixModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
