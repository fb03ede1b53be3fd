//! Dense 4-D tensors in (batch, channel, row, column) order.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, NumAssign};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage precision of a tensor or model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn code(self) -> u8 {
        match self {
            Precision::Single => 0,
            Precision::Double => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Precision::Single),
            1 => Some(Precision::Double),
            _ => None,
        }
    }
}

/// Floating point element type. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + NumAssign + Sum + Default + Debug + Send + Sync + 'static
{
    const PRECISION: Precision;
    const BYTES: usize;

    fn of(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn put_le(self, out: &mut Vec<u8>);
    /// Reads one value from the front of `bytes`, which holds at least `BYTES` bytes.
    fn get_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Single;
    const BYTES: usize = 4;

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Double;
    const BYTES: usize = 8;

    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        let shape = Shape {
            batch,
            channels,
            height,
            width,
        };
        shape.checked_len()?;
        Ok(shape)
    }

    fn checked_len(&self) -> Result<usize> {
        let dims = [self.batch, self.channels, self.height, self.width];
        if dims.contains(&0) {
            return Err(Error::Size(format!("every dimension must be >= 1, got {self}")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= isize::MAX as usize)
            .ok_or_else(|| Error::Size(format!("element count of {self} overflows")))
    }

    pub fn len(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Shape { channels, ..self }
    }

    pub fn with_spatial(self, height: usize, width: usize) -> Self {
        Shape {
            height,
            width,
            ..self
        }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.batch, self.channels, self.height, self.width
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn full(shape: Shape, fill: T) -> Self {
        Tensor {
            shape,
            data: vec![fill; shape.len()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        let s = &self.shape;
        debug_assert!(b < s.batch && c < s.channels && y < s.height && x < s.width);
        ((b * s.channels + c) * s.height + y) * s.width + x
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, value: T) {
        let i = self.index(b, c, y, x);
        self.data[i] = value;
    }

    /// The `H×W` plane of sample `b`, channel `c`.
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (b * self.shape.channels + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (b * self.shape.channels + c) * p;
        &mut self.data[start..start + p]
    }

    /// Copy of a single batch entry as a batch-of-one tensor.
    pub fn sample(&self, b: usize) -> Tensor<T> {
        let n = self.shape.channels * self.shape.plane();
        Tensor {
            shape: Shape {
                batch: 1,
                ..self.shape
            },
            data: self.data[b * n..(b + 1) * n].to_vec(),
        }
    }

    /// Concatenates batch-of-any tensors of equal per-sample shape along the batch axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = items
            .first()
            .ok_or_else(|| Error::Argument("cannot stack zero tensors".into()))?;
        let s = first.shape;
        let mut batch = 0;
        let mut data = Vec::new();
        for t in items {
            if t.shape.with_spatial(s.height, s.width) != t.shape
                || t.shape.channels != s.channels
            {
                return Err(Error::Shape(format!(
                    "cannot stack {} with {}",
                    t.shape, s
                )));
            }
            batch += t.shape.batch;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(Shape::new(batch, s.channels, s.height, s.width)?, data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::of(v.to_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs().to_f64())
            .fold(0.0, f64::max)
    }
}

/// Zero padding applied on each side for a `kernel` window at `stride`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamePadding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
    pub out_height: usize,
    pub out_width: usize,
}

fn same_1d(len: usize, kernel: usize, stride: usize) -> (usize, usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(len);
    (total / 2, total - total / 2, out)
}

/// Padding such that a `kernel×kernel` window at `stride` yields `ceil(H/stride)×ceil(W/stride)`
/// outputs. Any odd remainder goes to the bottom/right edge.
pub fn same_padding(height: usize, width: usize, kernel: usize, stride: usize) -> Result<SamePadding> {
    if kernel.is_multiple_of(2) {
        return Err(Error::Unsupported(format!("even kernel size {kernel}")));
    }
    if !(1..=2).contains(&stride) {
        return Err(Error::Unsupported(format!("stride {stride}")));
    }
    let (top, bottom, out_height) = same_1d(height, kernel, stride);
    let (left, right, out_width) = same_1d(width, kernel, stride);
    Ok(SamePadding {
        top,
        bottom,
        left,
        right,
        out_height,
        out_width,
    })
}

/// Zero-pads `x` for a same-size `kernel×kernel` convolution at `stride`.
pub fn pad_same<T: Scalar>(x: &Tensor<T>, kernel: usize, stride: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    let pad = same_padding(s.height, s.width, kernel, stride)?;
    let out_shape = Shape::new(
        s.batch,
        s.channels,
        s.height + pad.top + pad.bottom,
        s.width + pad.left + pad.right,
    )?;
    let mut out = Tensor::zeros(out_shape);
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = x.plane(b, c);
            let dst = out.plane_mut(b, c);
            for y in 0..s.height {
                let row = (y + pad.top) * out_shape.width + pad.left;
                dst[row..row + s.width].copy_from_slice(&src[y * s.width..(y + 1) * s.width]);
            }
        }
    }
    Ok(out)
}

pub fn map_elementwise<T: Scalar>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    x.map(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valid_out(padded: usize, kernel: usize, stride: usize) -> usize {
        // count window positions by enumeration
        (0..padded).step_by(stride).filter(|&s| s + kernel <= padded).count()
    }

    #[test]
    fn fill_values() {
        let t = Tensor::<f32>::full(Shape::new(1, 1, 2, 2).unwrap(), 0.0);
        assert_eq!(t.data(), &[0.0; 4]);
        let t = Tensor::<f32>::full(Shape::new(1, 3, 4, 4).unwrap(), 1.0);
        assert_eq!(t.data().len(), 48);
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_channel_shape_is_size_error() {
        assert!(matches!(Shape::new(1, 0, 4, 4), Err(Error::Size(_))));
        assert!(matches!(
            Shape::new(usize::MAX, 2, 2, 2),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn pad_same_stride_one() {
        let x = Tensor::<f32>::full(Shape::new(1, 1, 4, 4).unwrap(), 1.0);
        let p = pad_same(&x, 3, 1).unwrap();
        assert_eq!((p.shape().height, p.shape().width), (6, 6));
        assert_eq!(valid_out(6, 3, 1), 4);
        assert_eq!(p.get(0, 0, 0, 0), 0.0);
        assert_eq!(p.get(0, 0, 1, 1), 1.0);
    }

    #[test]
    fn pad_same_stride_two() {
        let pad = same_padding(4, 4, 3, 2).unwrap();
        assert_eq!((pad.out_height, pad.out_width), (2, 2));
        assert_eq!(valid_out(4 + pad.top + pad.bottom, 3, 2), 2);

        let pad = same_padding(5, 5, 3, 2).unwrap();
        assert_eq!(pad.out_height, 3);
        assert_eq!((pad.top, pad.bottom), (1, 1));
        assert_eq!(valid_out(5 + pad.top + pad.bottom, 3, 2), 3);
    }

    #[test]
    fn pad_same_rejects_even_kernel() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 4, 4).unwrap());
        assert!(matches!(pad_same(&x, 2, 1), Err(Error::Unsupported(_))));
    }

    #[test]
    fn pad_same_exhaustive_small_range() {
        for h in 1..=64 {
            for w in [1, 7, 32, 64] {
                for stride in [1, 2] {
                    let pad = same_padding(h, w, 3, stride).unwrap();
                    assert_eq!(valid_out(h + pad.top + pad.bottom, 3, stride), h.div_ceil(stride));
                    assert_eq!(valid_out(w + pad.left + pad.right, 3, stride), w.div_ceil(stride));
                }
            }
        }
    }

    #[test]
    fn elementwise_maps() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3).unwrap(), vec![-1.0f32, 0.0, 3.0]).unwrap();
        assert_eq!(map_elementwise(&x, |v| v), x);
        assert_eq!(map_elementwise(&x, |v| -v).data(), &[1.0, -0.0, -3.0]);
        assert_eq!(map_elementwise(&x, |v| v.max(0.0)).data(), &[0.0, 0.0, 3.0]);
    }

    proptest::proptest! {
        #[test]
        fn index_round_trip(b in 0usize..2, c in 0usize..3, y in 0usize..5, x in 0usize..4, v in -1e3f64..1e3) {
            let mut t = Tensor::<f64>::zeros(Shape::new(2, 3, 5, 4).unwrap());
            t.set(b, c, y, x, v);
            proptest::prop_assert_eq!(t.get(b, c, y, x), v);
            proptest::prop_assert_eq!(t.data().iter().filter(|&&e| e != 0.0).count(), usize::from(v != 0.0));
        }
    }
}
