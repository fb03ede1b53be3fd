//! Color lookup-table baseline: a linear SVM on HSV pixel values compiled into
//! a table indexed by quantized color.

use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Mask, Sample};
use crate::error::{Error, Result};
use crate::net::io::Reader;
use crate::net::ProbMap;
use crate::rng::{derived, seeded};
use crate::segmenter::Segmenter;
use crate::tensor::{Shape, Tensor};

pub const LUT_MAGIC: &[u8; 4] = b"SLUT";
pub const LUT_VERSION: u32 = 1;
pub const DEFAULT_BITS: u8 = 6;
pub const PIXELS_PER_IMAGE: usize = 2000;

/// Hexcone conversion; `h` in `[0, 1)`, and 0 for grays.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return (0.0, 0.0, v);
    }
    let sector = if max == r {
        (g - b) / delta
    } else if max == g {
        2.0 + (b - r) / delta
    } else {
        4.0 + (r - g) / delta
    };
    let mut h = sector / 6.0;
    if h < 0.0 {
        h += 1.0;
    }
    if h >= 1.0 {
        h -= 1.0;
    }
    (h, s, v)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = (h6.floor() as usize).min(5);
    let f = h6 - i as f64;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Pixel features (HSV) with class labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PixelSet {
    pub features: Vec<[f64; 3]>,
    pub labels: Vec<u8>,
}

impl PixelSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, rgb: [f32; 3], label: u8) {
        let (h, s, v) = rgb_to_hsv(rgb[0] as f64, rgb[1] as f64, rgb[2] as f64);
        self.features.push([h, s, v]);
        self.labels.push(label);
    }
}

/// Draws at most `per_image` pixels from each image, splitting the quota evenly
/// over the classes present and handing unused quota to the larger classes.
pub fn sample_pixels(samples: &[Sample], per_image: usize, seed: u64) -> PixelSet {
    let mut out = PixelSet::default();
    for (i, s) in samples.iter().enumerate() {
        let mut rng = derived(seed, i as u64);
        let classes = s.target.max_class() as usize + 1;
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
        for (p, &c) in s.target.data.iter().enumerate() {
            by_class[c as usize].push(p);
        }
        let mut order: Vec<usize> = (0..classes).filter(|&c| !by_class[c].is_empty()).collect();
        order.sort_by_key(|&c| by_class[c].len());
        let mut quota = per_image;
        for (k, &c) in order.iter().enumerate() {
            let share = quota / (order.len() - k);
            let take = share.min(by_class[c].len());
            quota -= take;
            let pick = sample_indices(&mut rng, by_class[c].len(), take);
            for j in pick.iter() {
                let p = by_class[c][j];
                let rgb = [s.image.plane(0, 0)[p], s.image.plane(0, 1)[p], s.image.plane(0, 2)[p]];
                out.push(rgb, c as u8);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmOptions {
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions { epochs: 10, seed: 0 }
    }
}

/// The default regularization grid.
pub const C_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

/// One-vs-rest linear classifiers over `(h, s, v, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<[f64; 4]>,
    pub c_reg: f64,
}

impl LinearSvm {
    pub fn classes(&self) -> usize {
        self.weights.len()
    }

    pub fn scores(&self, hsv: [f64; 3]) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .map(move |w| w[0] * hsv[0] + w[1] * hsv[1] + w[2] * hsv[2] + w[3])
    }

    /// Highest-scoring class; ties go to the lower id.
    pub fn predict(&self, hsv: [f64; 3]) -> u8 {
        let mut best = (0, f64::NEG_INFINITY);
        for (c, s) in self.scores(hsv).enumerate() {
            if s > best.1 {
                best = (c, s);
            }
        }
        best.0 as u8
    }

    pub fn accuracy(&self, set: &PixelSet) -> f64 {
        if set.is_empty() {
            return 0.0;
        }
        let hits = set
            .features
            .iter()
            .zip(&set.labels)
            .filter(|(f, &l)| self.predict(**f) == l)
            .count();
        hits as f64 / set.len() as f64
    }
}

/// Pegasos: stochastic subgradient descent on the regularized hinge loss with
/// `λ = 1/(C·n)` and step `1/(λ t)`, visiting samples in a seeded order.
fn pegasos(set: &PixelSet, positive: u8, c_reg: f64, opts: SvmOptions) -> [f64; 4] {
    let n = set.len();
    let lambda = 1.0 / (c_reg * n as f64);
    let mut w = [0f64; 4];
    let mut rng = seeded(opts.seed);
    let mut t = 0u64;
    for _ in 0..opts.epochs {
        for _ in 0..n {
            let i = rng.random_range(0..n);
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let f = set.features[i];
            let x = [f[0], f[1], f[2], 1.0];
            let y = if set.labels[i] == positive { 1.0 } else { -1.0 };
            let margin = y * (0..4).map(|k| w[k] * x[k]).sum::<f64>();
            let shrink = 1.0 - eta * lambda;
            for k in 0..4 {
                w[k] *= shrink;
                if margin < 1.0 {
                    w[k] += eta * y * x[k];
                }
            }
            // projection onto the ball of radius 1/sqrt(λ)
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            let radius = 1.0 / lambda.sqrt();
            if norm > radius {
                for v in &mut w {
                    *v *= radius / norm;
                }
            }
        }
    }
    w
}

pub fn train_svm(set: &PixelSet, classes: usize, c_reg: f64, opts: SvmOptions) -> Result<LinearSvm> {
    let mut present = vec![false; classes];
    for &l in &set.labels {
        if l as usize >= classes {
            return Err(Error::Argument(format!("pixel label {l} for {classes} classes")));
        }
        present[l as usize] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::DegenerateData("pixel classifier needs at least two classes present".into()));
    }
    if !(c_reg > 0.0 && c_reg.is_finite()) {
        return Err(Error::Argument(format!("regularization constant {c_reg} must be positive")));
    }
    let weights = (0..classes)
        .map(|c| pegasos(set, c as u8, c_reg, opts))
        .collect();
    Ok(LinearSvm { weights, c_reg })
}

/// Trains one SVM per grid value and keeps the one with the best validation
/// pixel accuracy (earliest grid value on ties).
pub fn train_pixel_svm(
    train: &PixelSet,
    validation: &PixelSet,
    classes: usize,
    grid: &[f64],
    opts: SvmOptions,
) -> Result<LinearSvm> {
    if grid.is_empty() {
        return Err(Error::Argument("empty regularization grid".into()));
    }
    let check = if validation.is_empty() { train } else { validation };
    let mut best: Option<(f64, LinearSvm)> = None;
    for &c in grid {
        let svm = train_svm(train, classes, c, opts)?;
        let acc = svm.accuracy(check);
        if best.as_ref().is_none_or(|(a, _)| acc > *a) {
            best = Some((acc, svm));
        }
    }
    Ok(best.expect("non-empty grid").1)
}

/// Class id per quantized HSV cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LutTable {
    pub bits: u8,
    pub classes: u8,
    pub table: Vec<u8>,
}

fn quantize(x: f64, bits: u8) -> usize {
    let levels = 1usize << bits;
    ((x * levels as f64).floor().max(0.0) as usize).min(levels - 1)
}

pub fn build_lut(svm: &LinearSvm, bits: u8) -> Result<LutTable> {
    if !(1..=8).contains(&bits) {
        return Err(Error::Argument(format!("lookup table bits {bits} outside 1..=8")));
    }
    let levels = 1usize << bits;
    let center = |q: usize| (q as f64 + 0.5) / levels as f64;
    let mut table = Vec::with_capacity(levels * levels * levels);
    for h in 0..levels {
        for s in 0..levels {
            for v in 0..levels {
                table.push(svm.predict([center(h), center(s), center(v)]));
            }
        }
    }
    Ok(LutTable {
        bits,
        classes: svm.classes() as u8,
        table,
    })
}

impl LutTable {
    pub fn index(&self, hsv: [f64; 3]) -> usize {
        let b = self.bits;
        (quantize(hsv[0], b) << (2 * b)) | (quantize(hsv[1], b) << b) | quantize(hsv[2], b)
    }

    pub fn lookup(&self, r: f32, g: f32, b: f32) -> u8 {
        let mut out = [0u8];
        self.classify(&[r], &[g], &[b], &mut out);
        out[0]
    }

    /// Labels a run of pixels given as separate R, G, B slices. The HSV
    /// conversion is written with selects instead of branches so it
    /// vectorizes; only the final table read is a gather.
    pub fn classify(&self, r: &[f32], g: &[f32], b: &[f32], out: &mut [u8]) {
        const CHUNK: usize = 64;
        let bits = u32::from(self.bits);
        let levels = (1u32 << bits) as f32;
        let top = (1u32 << bits) - 1;
        let mut cells = [0u32; CHUNK];
        for (((r, g), b), out) in r.chunks(CHUNK).zip(g.chunks(CHUNK)).zip(b.chunks(CHUNK)).zip(out.chunks_mut(CHUNK)) {
            for (((cell, &r), &g), &b) in cells.iter_mut().zip(r).zip(g).zip(b) {
                let max = r.max(g).max(b);
                let delta = max - r.min(g).min(b);
                let inv = if delta > 0.0 { 1.0 / delta } else { 0.0 };
                let s = if max > 0.0 { delta / max } else { 0.0 };
                let sector = if max == r {
                    (g - b) * inv
                } else if max == g {
                    2.0 + (b - r) * inv
                } else {
                    4.0 + (r - g) * inv
                };
                let h = sector / 6.0;
                let h = if h < 0.0 { h + 1.0 } else { h };
                let q = |x: f32| ((x * levels) as u32).min(top);
                *cell = (q(h) << (2 * bits)) | (q(s) << bits) | q(max);
            }
            for (o, &cell) in out.iter_mut().zip(&cells) {
                *o = self.table[cell as usize];
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = LUT_MAGIC.to_vec();
        out.extend_from_slice(&LUT_VERSION.to_le_bytes());
        out.push(self.bits);
        out.push(self.classes);
        out.extend_from_slice(&self.table);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4, "magic")? != LUT_MAGIC {
            return Err(Error::format(0, "bad lookup-table magic"));
        }
        let version = r.u32("version")?;
        if version != LUT_VERSION {
            return Err(Error::format(4, format!("unsupported lookup-table version {version}")));
        }
        let bits = r.u8("bits")?;
        if !(1..=8).contains(&bits) {
            return Err(Error::format(8, format!("lookup table bits {bits} outside 1..=8")));
        }
        let classes = r.u8("class count")?;
        if classes < 2 {
            return Err(Error::format(9, format!("class count {classes}")));
        }
        let start = r.offset();
        let table = r.take(1 << (3 * bits as usize), "table")?.to_vec();
        r.finish()?;
        if let Some(i) = table.iter().position(|&c| c >= classes) {
            return Err(Error::format(start + i as u64, format!("table entry {} ≥ {classes}", table[i])));
        }
        Ok(LutTable { bits, classes, table })
    }
}

pub fn save_lut(lut: &LutTable, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, lut.encode())?;
    Ok(())
}

pub fn load_lut(path: impl AsRef<Path>) -> Result<LutTable> {
    LutTable::decode(&std::fs::read(path)?)
}

/// Per-pixel table lookup of batch entry 0; no neighborhood context.
pub fn lut_segment(image: &Tensor<f32>, lut: &LutTable) -> Result<Mask> {
    let s = image.shape();
    if s.channels != 3 {
        return Err(Error::Shape(format!("lookup segmentation needs RGB input, got {s}")));
    }
    let (r, g, b) = (image.plane(0, 0), image.plane(0, 1), image.plane(0, 2));
    let mut data = vec![0u8; s.plane()];
    lut.classify(r, g, b, &mut data);
    Mask::from_vec(s.height, s.width, data)
}

impl Segmenter for LutTable {
    fn kind(&self) -> &'static str {
        "lut"
    }

    fn config_id(&self) -> String {
        format!("lut-hsv{}", self.bits)
    }

    fn classes(&self) -> usize {
        self.classes as usize
    }

    fn check_input(&self, shape: Shape) -> Result<()> {
        if shape.channels != 3 {
            return Err(Error::Shape(format!("lookup segmentation needs RGB input, got {shape}")));
        }
        Ok(())
    }

    /// One-hot probabilities of the looked-up class.
    fn predict(&self, image: &Tensor<f32>) -> Result<ProbMap<f32>> {
        let s = image.shape();
        self.check_input(s)?;
        let c = self.classes as usize;
        let mut out = Tensor::zeros(s.with_channels(c));
        for b in 0..s.batch {
            let (r, g, bl) = (image.plane(b, 0), image.plane(b, 1), image.plane(b, 2));
            let mut labels = vec![0u8; s.plane()];
            self.classify(r, g, bl, &mut labels);
            for class in 0..c {
                for (o, &l) in out.plane_mut(b, class).iter_mut().zip(&labels) {
                    *o = if usize::from(l) == class { 1.0 } else { 0.0 };
                }
            }
        }
        Ok(ProbMap::new(out))
    }
}
