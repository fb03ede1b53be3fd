use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Passes `dy` where the forward input was positive.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != dy.shape() {
        return Err(Error::Shape(format!("relu: x {} vs dy {}", x.shape(), dy.shape())));
    }
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Softmax over the channel axis at every pixel, with max subtraction.
pub fn softmax_pixelwise_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let plane = s.plane();
    let mut out = x.clone();
    // channel-at-a-time over whole planes keeps every loop contiguous
    let mut acc = vec![T::zero(); plane];
    for b in 0..s.batch {
        let planes = &mut out.data_mut()[b * s.channels * plane..(b + 1) * s.channels * plane];
        acc.fill(T::neg_infinity());
        for p in planes.chunks_exact(plane) {
            for (m, &v) in acc.iter_mut().zip(p) {
                *m = m.max(v);
            }
        }
        let max = acc.clone();
        acc.fill(T::zero());
        for p in planes.chunks_exact_mut(plane) {
            for ((v, &m), sum) in p.iter_mut().zip(&max).zip(acc.iter_mut()) {
                *v = (*v - m).exp();
                *sum += *v;
            }
        }
        acc.iter_mut().for_each(|sum| *sum = T::one() / *sum);
        for p in planes.chunks_exact_mut(plane) {
            for (v, &inv) in p.iter_mut().zip(&acc) {
                *v *= inv;
            }
        }
    }
    out
}
