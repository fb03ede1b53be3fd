//! Little-endian model files.
//!
//! ```text
//! "SMKR" | version u32 | precision u8 (bit 7: folded) | C u8 | L u8 | F u8 | S u8
//!        | M f64 | bn momentum f64 | bn epsilon f64 | stage blobs...
//! stage blob: kind u8 | in_ch u16 | out_ch u16 | pool u8 | upsample u8 | has_bn u8 | arrays
//! ```
//!
//! Kinds are 0 = encoder, 1 = decoder, 2 = input normalization. Unfolded files
//! start with the input-normalization blob (γ, β, mean, var); every conv stage
//! stores depthwise then pointwise weights, followed by γ, β, mean, var when it
//! has a batch norm. Folded files omit the input-normalization blob and append
//! the folded bias (`out_ch`) and padding values (`in_ch`) to each stage.

use std::path::Path;

use crate::error::{Error, Result};
use crate::net::config::{NetworkConfig, INPUT_CHANNELS};
use crate::net::model::{plan_stages, Model, Stage, StageKind, StagePlan};
use crate::ops::batchnorm::{BatchNorm, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
use crate::ops::conv::{SeparableConv, TAPS};
use crate::optimize::{FoldedModel, FoldedStage};
use crate::tensor::{Precision, Scalar};

pub const MAGIC: &[u8; 4] = b"SMKR";
pub const VERSION: u32 = 1;
const FOLDED_BIT: u8 = 0x80;
const KIND_INPUT_NORM: u8 = 2;

/// Fixed-size prefix of a model file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelHeader {
    pub version: u32,
    pub precision: Precision,
    pub folded: bool,
    pub config: NetworkConfig,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated while reading {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn array<T: Scalar>(&mut self, n: usize, what: &str) -> Result<Vec<T>> {
        let raw = self.take(n * T::BYTES, what)?;
        Ok(raw.chunks_exact(T::BYTES).map(T::get_le).collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.pos as u64,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn put_array<T: Scalar>(out: &mut Vec<u8>, values: &[T]) {
    for &v in values {
        v.put_le(out);
    }
}

fn put_header(out: &mut Vec<u8>, precision: Precision, folded: bool, cfg: &NetworkConfig, momentum: f64, epsilon: f64) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(precision.code() | if folded { FOLDED_BIT } else { 0 });
    out.push(cfg.classes as u8);
    out.push(cfg.layers as u8);
    out.push(cfg.filters as u8);
    out.push(cfg.stride as u8);
    out.extend_from_slice(&cfg.multiplier.to_le_bytes());
    out.extend_from_slice(&momentum.to_le_bytes());
    out.extend_from_slice(&epsilon.to_le_bytes());
}

fn put_stage_header(out: &mut Vec<u8>, kind: u8, in_ch: usize, out_ch: usize, pool: bool, upsample: usize, has_bn: bool) {
    out.push(kind);
    out.extend_from_slice(&(in_ch as u16).to_le_bytes());
    out.extend_from_slice(&(out_ch as u16).to_le_bytes());
    out.push(pool as u8);
    out.push(upsample as u8);
    out.push(has_bn as u8);
}

fn kind_code(kind: StageKind) -> u8 {
    match kind {
        StageKind::Encoder => 0,
        StageKind::Decoder => 1,
    }
}

fn put_bn<T: Scalar>(out: &mut Vec<u8>, bn: &BatchNorm<T>) {
    put_array(out, &bn.gamma);
    put_array(out, &bn.beta);
    put_array(out, &bn.running_mean);
    put_array(out, &bn.running_var);
}

pub fn encode_model<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let mut out = Vec::new();
    let bn = &model.input_norm;
    put_header(&mut out, T::PRECISION, false, &model.config, bn.momentum.to_f64(), bn.epsilon.to_f64());
    put_stage_header(&mut out, KIND_INPUT_NORM, INPUT_CHANNELS, INPUT_CHANNELS, false, 1, true);
    put_bn(&mut out, bn);
    for s in &model.stages {
        put_stage_header(&mut out, kind_code(s.kind), s.conv.in_channels, s.conv.out_channels, s.pool, s.upsample, s.bn.is_some());
        put_array(&mut out, &s.conv.depthwise);
        put_array(&mut out, &s.conv.pointwise);
        if let Some(bn) = &s.bn {
            put_bn(&mut out, bn);
        }
    }
    out
}

pub fn encode_folded<T: Scalar>(model: &FoldedModel<T>) -> Vec<u8> {
    let mut out = Vec::new();
    put_header(&mut out, T::PRECISION, true, &model.config, DEFAULT_MOMENTUM, DEFAULT_EPSILON);
    for s in &model.stages {
        put_stage_header(&mut out, kind_code(s.kind), s.conv.in_channels, s.conv.out_channels, s.pool, s.upsample, false);
        put_array(&mut out, &s.conv.depthwise);
        put_array(&mut out, &s.conv.pointwise);
        put_array(&mut out, &s.bias);
        put_array(&mut out, &s.pad);
    }
    out
}

fn read_header(r: &mut Reader<'_>) -> Result<ModelHeader> {
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"SMKR\"")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let at = r.offset();
    let p = r.u8("precision")?;
    let precision = Precision::from_code(p & !FOLDED_BIT)
        .ok_or_else(|| Error::format(at, format!("unknown precision code {p}")))?;
    let classes = r.u8("C")? as usize;
    let layers = r.u8("L")? as usize;
    let filters = r.u8("F")? as usize;
    let stride = r.u8("S")? as usize;
    let multiplier = r.f64("M")?;
    let config = NetworkConfig::new(layers, filters, multiplier, stride, classes);
    config
        .check()
        .map_err(|v| Error::format(at + 1, format!("invalid network configuration: {v}")))?;
    Ok(ModelHeader {
        version,
        precision,
        folded: p & FOLDED_BIT != 0,
        config,
        bn_momentum: r.f64("bn momentum")?,
        bn_epsilon: r.f64("bn epsilon")?,
    })
}

/// Reads only the header, e.g. to decide how to load a file.
pub fn decode_header(bytes: &[u8]) -> Result<ModelHeader> {
    read_header(&mut Reader::new(bytes))
}

fn expect_stage(r: &mut Reader<'_>, kind: u8, plan: &StagePlan, has_bn: bool) -> Result<()> {
    let at = r.offset();
    let got = (
        r.u8("stage kind")?,
        r.u16("stage in_ch")? as usize,
        r.u16("stage out_ch")? as usize,
        r.u8("stage pool")? != 0,
        r.u8("stage upsample")? as usize,
        r.u8("stage has_bn")? != 0,
    );
    let want = (kind, plan.in_channels, plan.out_channels, plan.pool, plan.upsample, has_bn);
    if got != want {
        return Err(Error::format(at, format!("stage header {got:?} does not match configuration, expected {want:?}")));
    }
    Ok(())
}

fn read_bn<T: Scalar>(r: &mut Reader<'_>, n: usize, momentum: T, epsilon: T) -> Result<BatchNorm<T>> {
    Ok(BatchNorm {
        gamma: r.array(n, "bn gamma")?,
        beta: r.array(n, "bn beta")?,
        running_mean: r.array(n, "bn running mean")?,
        running_var: r.array(n, "bn running var")?,
        epsilon,
        momentum,
    })
}

fn check_kind<T: Scalar>(h: &ModelHeader, folded: bool) -> Result<()> {
    if h.precision != T::PRECISION {
        return Err(Error::format(8, format!("file holds {:?} precision, {:?} requested", h.precision, T::PRECISION)));
    }
    if h.folded != folded {
        let what = if h.folded { "folded" } else { "unfolded" };
        return Err(Error::format(8, format!("file holds a {what} model")));
    }
    Ok(())
}

pub fn decode_model<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let mut r = Reader::new(bytes);
    let h = read_header(&mut r)?;
    check_kind::<T>(&h, false)?;
    let (momentum, epsilon) = (T::of(h.bn_momentum), T::of(h.bn_epsilon));
    let input_plan = StagePlan {
        kind: StageKind::Encoder,
        in_channels: INPUT_CHANNELS,
        out_channels: INPUT_CHANNELS,
        stride: 1,
        relu: false,
        pool: false,
        upsample: 1,
        has_bn: true,
    };
    expect_stage(&mut r, KIND_INPUT_NORM, &input_plan, true)?;
    let input_norm = read_bn(&mut r, INPUT_CHANNELS, momentum, epsilon)?;
    let mut stages = Vec::new();
    for p in plan_stages(&h.config) {
        expect_stage(&mut r, kind_code(p.kind), &p, p.has_bn)?;
        let depthwise = r.array(p.in_channels * TAPS, "depthwise weights")?;
        let pointwise = r.array(p.in_channels * p.out_channels, "pointwise weights")?;
        let bn = if p.has_bn {
            Some(read_bn(&mut r, p.out_channels, momentum, epsilon)?)
        } else {
            None
        };
        stages.push(Stage {
            kind: p.kind,
            conv: SeparableConv {
                in_channels: p.in_channels,
                out_channels: p.out_channels,
                depthwise,
                pointwise,
            },
            stride: p.stride,
            relu: p.relu,
            pool: p.pool,
            upsample: p.upsample,
            bn,
        });
    }
    r.finish()?;
    Ok(Model {
        config: h.config,
        input_norm,
        stages,
    })
}

pub fn decode_folded<T: Scalar>(bytes: &[u8]) -> Result<FoldedModel<T>> {
    let mut r = Reader::new(bytes);
    let h = read_header(&mut r)?;
    check_kind::<T>(&h, true)?;
    let mut stages = Vec::new();
    for p in plan_stages(&h.config) {
        expect_stage(&mut r, kind_code(p.kind), &p, false)?;
        let depthwise = r.array(p.in_channels * TAPS, "depthwise weights")?;
        let pointwise = r.array(p.in_channels * p.out_channels, "pointwise weights")?;
        let bias = r.array(p.out_channels, "folded bias")?;
        let pad = r.array(p.in_channels, "padding values")?;
        stages.push(FoldedStage {
            kind: p.kind,
            conv: SeparableConv {
                in_channels: p.in_channels,
                out_channels: p.out_channels,
                depthwise,
                pointwise,
            },
            bias,
            pad,
            stride: p.stride,
            relu: p.relu,
            pool: p.pool,
            upsample: p.upsample,
        });
    }
    r.finish()?;
    Ok(FoldedModel {
        config: h.config,
        stages,
    })
}

pub fn save_model<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    decode_model(&std::fs::read(path)?)
}

pub fn save_folded<T: Scalar>(model: &FoldedModel<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_folded(model))?;
    Ok(())
}

pub fn load_folded<T: Scalar>(path: impl AsRef<Path>) -> Result<FoldedModel<T>> {
    decode_folded(&std::fs::read(path)?)
}
