//! A common interface over the segmentation methods, and a registry that
//! selects one by name at runtime.

use std::collections::BTreeMap;
use std::path::Path;

use crate::baseline::{load_lut, LutTable, LUT_MAGIC};
use crate::error::{Error, Result};
use crate::net::io::{decode_folded, decode_header, decode_model, MAGIC};
use crate::net::{Model, NetworkConfig, ProbMap};
use crate::optimize::{fold_batchnorm, FoldedModel};
use crate::tensor::{Precision, Scalar, Shape, Tensor};

pub trait Segmenter: Send + Sync {
    /// Registry name of the method.
    fn kind(&self) -> &'static str;
    /// Configuration identifier used in reports.
    fn config_id(&self) -> String;
    fn config(&self) -> Option<NetworkConfig> {
        None
    }
    fn classes(&self) -> usize;
    fn check_input(&self, shape: Shape) -> Result<()>;
    /// Per-pixel class probabilities for an RGB image in `[0, 1]`.
    fn predict(&self, image: &Tensor<f32>) -> Result<ProbMap<f32>>;
}

fn cast_in<T: Scalar>(image: &Tensor<f32>) -> std::borrow::Cow<'_, Tensor<T>> {
    match (image as &dyn std::any::Any).downcast_ref::<Tensor<T>>() {
        Some(same) => std::borrow::Cow::Borrowed(same),
        None => std::borrow::Cow::Owned(image.cast()),
    }
}

fn cast_out<T: Scalar>(p: ProbMap<T>) -> ProbMap<f32> {
    let t = p.into_tensor();
    match (Box::new(t) as Box<dyn std::any::Any>).downcast::<Tensor<f32>>() {
        Ok(same) => ProbMap::new(*same),
        Err(other) => ProbMap::new(other.downcast::<Tensor<T>>().expect("own type").cast()),
    }
}

impl<T: Scalar> Segmenter for Model<T> {
    fn kind(&self) -> &'static str {
        "cnn"
    }

    fn config_id(&self) -> String {
        self.config.to_string()
    }

    fn config(&self) -> Option<NetworkConfig> {
        Some(self.config)
    }

    fn classes(&self) -> usize {
        Model::classes(self)
    }

    fn check_input(&self, shape: Shape) -> Result<()> {
        Model::check_input(self, shape)
    }

    fn predict(&self, image: &Tensor<f32>) -> Result<ProbMap<f32>> {
        Ok(cast_out(self.forward(&cast_in::<T>(image))?))
    }
}

impl<T: Scalar> Segmenter for FoldedModel<T> {
    fn kind(&self) -> &'static str {
        "cnn-folded"
    }

    fn config_id(&self) -> String {
        self.config.to_string()
    }

    fn config(&self) -> Option<NetworkConfig> {
        Some(self.config)
    }

    fn classes(&self) -> usize {
        FoldedModel::classes(self)
    }

    fn check_input(&self, shape: Shape) -> Result<()> {
        FoldedModel::check_input(self, shape)
    }

    fn predict(&self, image: &Tensor<f32>) -> Result<ProbMap<f32>> {
        Ok(cast_out(self.forward(&cast_in::<T>(image))?))
    }
}

pub type Loader = fn(&[u8]) -> Result<Box<dyn Segmenter>>;

fn load_cnn(bytes: &[u8]) -> Result<Box<dyn Segmenter>> {
    match decode_header(bytes)?.precision {
        Precision::Single => Ok(Box::new(decode_model::<f32>(bytes)?)),
        Precision::Double => Ok(Box::new(decode_model::<f64>(bytes)?)),
    }
}

/// Accepts a folded model file, or folds an unfolded one on load.
fn load_cnn_folded(bytes: &[u8]) -> Result<Box<dyn Segmenter>> {
    let h = decode_header(bytes)?;
    Ok(match (h.folded, h.precision) {
        (true, Precision::Single) => Box::new(decode_folded::<f32>(bytes)?),
        (true, Precision::Double) => Box::new(decode_folded::<f64>(bytes)?),
        (false, Precision::Single) => Box::new(fold_batchnorm(&decode_model::<f32>(bytes)?)?),
        (false, Precision::Double) => Box::new(fold_batchnorm(&decode_model::<f64>(bytes)?)?),
    })
}

fn load_lut_bytes(bytes: &[u8]) -> Result<Box<dyn Segmenter>> {
    Ok(Box::new(LutTable::decode(bytes)?))
}

/// Named segmenter loaders.
pub struct SegmenterRegistry {
    loaders: BTreeMap<&'static str, Loader>,
}

impl SegmenterRegistry {
    pub fn empty() -> Self {
        SegmenterRegistry {
            loaders: BTreeMap::new(),
        }
    }

    /// `cnn`, `cnn-folded` and `lut`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("cnn", load_cnn);
        r.register("cnn-folded", load_cnn_folded);
        r.register("lut", load_lut_bytes);
        r
    }

    pub fn register(&mut self, name: &'static str, loader: Loader) {
        self.loaders.insert(name, loader);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.loaders.keys().copied()
    }

    pub fn decode(&self, name: &str, bytes: &[u8]) -> Result<Box<dyn Segmenter>> {
        let loader = self.loaders.get(name).ok_or_else(|| {
            Error::Argument(format!(
                "unknown segmenter {name:?}; known: {}",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })?;
        loader(bytes)
    }

    pub fn load(&self, name: &str, path: impl AsRef<Path>) -> Result<Box<dyn Segmenter>> {
        self.decode(name, &std::fs::read(path)?)
    }

    /// Registry name matching a file's magic and fold flag.
    pub fn sniff(bytes: &[u8]) -> Result<&'static str> {
        if bytes.starts_with(MAGIC) {
            Ok(if decode_header(bytes)?.folded { "cnn-folded" } else { "cnn" })
        } else if bytes.starts_with(LUT_MAGIC) {
            Ok("lut")
        } else {
            Err(Error::format(0, "not a model or lookup-table file"))
        }
    }

    pub fn load_auto(&self, path: impl AsRef<Path>) -> Result<Box<dyn Segmenter>> {
        let bytes = std::fs::read(path)?;
        self.decode(Self::sniff(&bytes)?, &bytes)
    }
}

impl Default for SegmenterRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Loads a lookup table as a boxed segmenter.
pub fn lut_segmenter(path: impl AsRef<Path>) -> Result<Box<dyn Segmenter>> {
    Ok(Box::new(load_lut(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::io::{encode_folded, encode_model};

    #[test]
    fn registry_selects_by_name_and_magic() {
        let cfg: NetworkConfig = "L3F4M1.5S2".parse().unwrap();
        let model = Model::<f32>::build(&cfg, 1).unwrap();
        let bytes = encode_model(&model);
        let reg = SegmenterRegistry::builtin();
        assert_eq!(reg.names().collect::<Vec<_>>(), ["cnn", "cnn-folded", "lut"]);
        assert_eq!(SegmenterRegistry::sniff(&bytes).unwrap(), "cnn");
        let a = reg.decode("cnn", &bytes).unwrap();
        let b = reg.decode("cnn-folded", &bytes).unwrap();
        assert_eq!((a.kind(), b.kind()), ("cnn", "cnn-folded"));
        let folded = encode_folded(&fold_batchnorm(&model).unwrap());
        assert_eq!(SegmenterRegistry::sniff(&folded).unwrap(), "cnn-folded");
        assert!(reg.decode("svm", &bytes).is_err());
        assert!(SegmenterRegistry::sniff(b"P6\n").is_err());

        let x = crate::testutil::random_tensor::<f32>(Shape::new(1, 3, 64, 64).unwrap(), 2).map(|v| v.abs().min(1.0));
        let pa = a.predict(&x).unwrap();
        let pb = b.predict(&x).unwrap();
        assert!(pa.tensor().max_abs_diff(pb.tensor()) < 1e-4);
    }

    #[test]
    fn double_model_predicts_single() {
        let cfg: NetworkConfig = "L3F4M1.5S2".parse().unwrap();
        let m64 = Model::<f64>::build(&cfg, 3).unwrap();
        let m32: Model<f32> = m64.cast();
        let x = crate::testutil::random_tensor::<f32>(Shape::new(1, 3, 32, 32).unwrap(), 4);
        let seg: &dyn Segmenter = &m64;
        let d = seg.predict(&x).unwrap();
        let s = Segmenter::predict(&m32, &x).unwrap();
        assert!(d.tensor().max_abs_diff(s.tensor()) < 1e-4);
    }
}
