//! Depthwise-separable 3×3 convolution (forward and backward) and a full
//! convolution used as the reference factorization.
//!
//! All convolutions use "same" zero padding (see [`same_padding`]) and carry
//! no bias, except for the folded inference path which adds a per-output
//! bias and may pad each input channel with a non-zero constant.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{pad_same, same_padding, SamePadding, Scalar, Shape, Tensor};

pub const KERNEL: usize = 3;
pub const TAPS: usize = KERNEL * KERNEL;

/// Parameters of one depthwise-separable convolution.
///
/// `depthwise` holds one 3×3 plane per input channel (`in × 9`), `pointwise`
/// is the `out × in` channel-mixing matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableConv<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub depthwise: Vec<T>,
    pub pointwise: Vec<T>,
}

impl<T: Scalar> SeparableConv<T> {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        SeparableConv {
            in_channels,
            out_channels,
            depthwise: vec![T::zero(); in_channels * TAPS],
            pointwise: vec![T::zero(); out_channels * in_channels],
        }
    }

    /// Center-delta depthwise kernels and an identity channel mix.
    pub fn identity(channels: usize) -> Self {
        let mut p = Self::zeros(channels, channels);
        for c in 0..channels {
            p.depthwise[c * TAPS + TAPS / 2] = T::one();
            p.pointwise[c * channels + c] = T::one();
        }
        p
    }

    /// Equivalent full kernel `W[o,i,·,·] = pointwise[o,i] · depthwise[i,·,·]`, laid out `out × in × 3 × 3`.
    pub fn to_full_weights(&self) -> Vec<T> {
        let mut w = Vec::with_capacity(self.out_channels * self.in_channels * TAPS);
        for o in 0..self.out_channels {
            for i in 0..self.in_channels {
                let scale = self.pointwise[o * self.in_channels + i];
                w.extend(self.depthwise[i * TAPS..(i + 1) * TAPS].iter().map(|&k| scale * k));
            }
        }
        w
    }

    pub fn parameter_count(&self) -> usize {
        self.depthwise.len() + self.pointwise.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().channels != self.in_channels {
            return Err(Error::Shape(format!(
                "separable conv expects {} input channels, got {}",
                self.in_channels,
                x.shape().channels
            )));
        }
        if self.depthwise.len() != self.in_channels * TAPS
            || self.pointwise.len() != self.in_channels * self.out_channels
        {
            return Err(Error::Shape("separable conv parameter lengths are inconsistent".into()));
        }
        Ok(())
    }
}

/// Output positions `[lo, hi)` whose kernel tap `k` lands inside an input of length `len`.
#[inline]
fn tap_range(len: usize, out_len: usize, pad: usize, stride: usize, k: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if len + pad < k + 1 {
        0
    } else {
        ((len - 1 + pad - k) / stride + 1).min(out_len)
    };
    (lo.min(hi), hi)
}

fn conv_geometry(shape: Shape, stride: usize) -> Result<SamePadding> {
    same_padding(shape.height, shape.width, KERNEL, stride)
}

/// One depthwise plane into a zeroed `dst`; returns the number of multiply-adds performed.
#[allow(clippy::too_many_arguments)]
fn depthwise_plane<T: Scalar>(
    src: &[T],
    h: usize,
    w: usize,
    kernel: &[T],
    pad: &SamePadding,
    stride: usize,
    pad_value: T,
    dst: &mut [T],
) -> u64 {
    let (oh, ow) = (pad.out_height, pad.out_width);
    let yr: [(usize, usize); KERNEL] = std::array::from_fn(|k| tap_range(h, oh, pad.top, stride, k));
    let xr: [(usize, usize); KERNEL] = std::array::from_fn(|k| tap_range(w, ow, pad.left, stride, k));
    // output columns where all three horizontal taps land inside the row
    let jlo = xr.iter().map(|r| r.0).max().unwrap_or(0);
    let jhi = xr.iter().map(|r| r.1).min().unwrap_or(0).max(jlo);
    // a tap outside the input reads `pad_value`
    let padded = pad_value != T::zero();
    for oy in 0..oh {
        let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
        for (ky, &(ylo, yhi)) in yr.iter().enumerate() {
            let [w0, w1, w2]: [T; KERNEL] = kernel[ky * KERNEL..(ky + 1) * KERNEL].try_into().unwrap();
            if oy < ylo || oy >= yhi {
                if padded {
                    let v = (w0 + w1 + w2) * pad_value;
                    dst_row.iter_mut().for_each(|d| *d += v);
                }
                continue;
            }
            let iy = oy * stride + ky - pad.top;
            let src_row = &src[iy * w..(iy + 1) * w];
            row_taps(src_row, stride, (jlo * stride).saturating_sub(pad.left), [w0, w1, w2], &mut dst_row[jlo..jhi]);
            for j in (0..jlo).chain(jhi..ow) {
                for (kx, &wgt) in [w0, w1, w2].iter().enumerate() {
                    match (j * stride + kx).checked_sub(pad.left).filter(|&i| i < w) {
                        Some(i) => dst_row[j] += wgt * src_row[i],
                        None => dst_row[j] += wgt * pad_value,
                    }
                }
            }
        }
    }
    if padded {
        // every tap is a multiply-add, real or padded
        return (oh * ow * TAPS) as u64;
    }
    yr.iter()
        .flat_map(|y| xr.iter().map(move |x| ((y.1 - y.0) * (x.1 - x.0)) as u64))
        .sum()
}

/// `dst[j] += Σ_k wgt[k]·src[base + j·stride + k]`, written so each stride
/// gets a loop the compiler can vectorize.
#[inline]
fn row_taps<T: Scalar>(src: &[T], stride: usize, base: usize, wgt: [T; KERNEL], dst: &mut [T]) {
    let n = dst.len();
    if n == 0 {
        return;
    }
    let [w0, w1, w2] = wgt;
    match stride {
        1 => {
            let r = &src[base..base + n + 2];
            for (((d, &a), &b), &c) in dst.iter_mut().zip(r).zip(&r[1..]).zip(&r[2..]) {
                *d += w0 * a + w1 * b + w2 * c;
            }
        }
        2 => {
            let r = &src[base..base + 2 * n + 1];
            for (j, d) in dst.iter_mut().enumerate() {
                *d += w0 * r[2 * j] + w1 * r[2 * j + 1] + w2 * r[2 * j + 2];
            }
        }
        _ => {
            let r = &src[base..base + stride * (n - 1) + 3];
            for (j, d) in dst.iter_mut().enumerate() {
                let i = stride * j;
                *d += w0 * r[i] + w1 * r[i + 1] + w2 * r[i + 2];
            }
        }
    }
}

/// Per-channel 3×3 filtering. `pad_values`, when given, replaces zero padding per channel.
pub(crate) fn depthwise_forward<T: Scalar>(
    x: &Tensor<T>,
    kernels: &[T],
    stride: usize,
    pad_values: Option<&[T]>,
) -> Result<(Tensor<T>, u64)> {
    let s = x.shape();
    let pad = conv_geometry(s, stride)?;
    let out_shape = s.with_spatial(pad.out_height, pad.out_width);
    let mut out = Tensor::zeros(out_shape);
    let plane = out_shape.plane();
    let channels = s.channels;
    let macs: u64 = out
        .data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .map(|(bc, dst)| {
            let (b, c) = (bc / channels, bc % channels);
            let pv = pad_values.map_or(T::zero(), |p| p[c]);
            depthwise_plane(
                x.plane(b, c),
                s.height,
                s.width,
                &kernels[c * TAPS..(c + 1) * TAPS],
                &pad,
                stride,
                pv,
                dst,
            )
        })
        .sum();
    Ok((out, macs))
}

/// 1×1 channel mix, `out[o] = bias[o] + Σ_i w[o,i]·x[i]`.
pub(crate) fn pointwise_forward<T: Scalar>(
    x: &Tensor<T>,
    weights: &[T],
    out_channels: usize,
    bias: Option<&[T]>,
) -> Result<(Tensor<T>, u64)> {
    let s = x.shape();
    let in_ch = s.channels;
    let out_shape = s.with_channels(out_channels);
    let mut out = Tensor::zeros(out_shape);
    let plane = s.plane();
    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(bo, dst)| {
            let (b, o) = (bo / out_channels, bo % out_channels);
            let b0 = bias.map_or(T::zero(), |bs| bs[o]);
            let w0 = weights[o * in_ch];
            for (d, &v) in dst.iter_mut().zip(x.plane(b, 0)) {
                *d = b0 + w0 * v;
            }
            for i in 1..in_ch {
                let wgt = weights[o * in_ch + i];
                for (d, &v) in dst.iter_mut().zip(x.plane(b, i)) {
                    *d += wgt * v;
                }
            }
        });
    let macs = (s.batch * out_channels * in_ch * plane) as u64;
    Ok((out, macs))
}

pub fn separable_conv_forward<T: Scalar>(
    x: &Tensor<T>,
    p: &SeparableConv<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    separable_conv_forward_counted(x, p, stride).map(|(y, _)| y)
}

/// Forward pass that also reports the multiply-adds performed on real (unpadded) input.
pub fn separable_conv_forward_counted<T: Scalar>(
    x: &Tensor<T>,
    p: &SeparableConv<T>,
    stride: usize,
) -> Result<(Tensor<T>, u64)> {
    p.check(x)?;
    let (dw, m1) = depthwise_forward(x, &p.depthwise, stride, None)?;
    let (y, m2) = pointwise_forward(&dw, &p.pointwise, p.out_channels, None)?;
    Ok((y, m1 + m2))
}

/// Full 3×3 cross-correlation with same padding; `weights` laid out `out × in × 3 × 3`.
pub fn full_conv_forward<T: Scalar>(
    x: &Tensor<T>,
    weights: &[T],
    out_channels: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    full_conv_forward_counted(x, weights, out_channels, stride).map(|(y, _)| y)
}

pub fn full_conv_forward_counted<T: Scalar>(
    x: &Tensor<T>,
    weights: &[T],
    out_channels: usize,
    stride: usize,
) -> Result<(Tensor<T>, u64)> {
    let s = x.shape();
    let in_ch = s.channels;
    if weights.len() != out_channels * in_ch * TAPS {
        return Err(Error::Shape(format!(
            "full conv weights have {} elements, expected {}×{}×3×3",
            weights.len(),
            out_channels,
            in_ch
        )));
    }
    let geo = conv_geometry(s, stride)?;
    let padded = pad_same(x, KERNEL, stride)?;
    let pw = padded.shape().width;
    let real_rows = geo.top..geo.top + s.height;
    let real_cols = geo.left..geo.left + s.width;
    let mut out = Tensor::zeros(Shape::new(s.batch, out_channels, geo.out_height, geo.out_width)?);
    let mut macs = 0u64;
    for b in 0..s.batch {
        for o in 0..out_channels {
            for i in 0..in_ch {
                let src = padded.plane(b, i);
                let kern = &weights[(o * in_ch + i) * TAPS..(o * in_ch + i + 1) * TAPS];
                for oy in 0..geo.out_height {
                    for ox in 0..geo.out_width {
                        let mut acc = T::zero();
                        for ky in 0..KERNEL {
                            let py = oy * stride + ky;
                            for kx in 0..KERNEL {
                                let px = ox * stride + kx;
                                acc += kern[ky * KERNEL + kx] * src[py * pw + px];
                                if real_rows.contains(&py) && real_cols.contains(&px) {
                                    macs += 1;
                                }
                            }
                        }
                        let idx = out.index(b, o, oy, ox);
                        out.data_mut()[idx] += acc;
                    }
                }
            }
        }
    }
    Ok((out, macs))
}

/// Gradients of a separable convolution with respect to its input and parameters.
#[derive(Debug, Clone)]
pub struct SeparableGrads<T> {
    pub dx: Tensor<T>,
    pub d_depthwise: Vec<T>,
    pub d_pointwise: Vec<T>,
}

pub fn separable_conv_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &SeparableConv<T>,
    stride: usize,
    dy: &Tensor<T>,
) -> Result<SeparableGrads<T>> {
    p.check(x)?;
    let (dw_out, _) = depthwise_forward(x, &p.depthwise, stride, None)?;
    separable_conv_backward_cached(x, &dw_out, p, stride, dy)
}

/// Backward pass reusing the depthwise output computed during the forward pass.
pub(crate) fn separable_conv_backward_cached<T: Scalar>(
    x: &Tensor<T>,
    dw_out: &Tensor<T>,
    p: &SeparableConv<T>,
    stride: usize,
    dy: &Tensor<T>,
) -> Result<SeparableGrads<T>> {
    let ds = dw_out.shape();
    if dy.shape() != ds.with_channels(p.out_channels) {
        return Err(Error::Shape(format!(
            "dy shape {} does not match conv output {}",
            dy.shape(),
            ds.with_channels(p.out_channels)
        )));
    }
    let (in_ch, out_ch) = (p.in_channels, p.out_channels);
    let batch = ds.batch;

    // pointwise weights: dW[o,i] = Σ_b Σ_p dy[b,o,p]·dw[b,i,p]
    let d_pointwise: Vec<T> = (0..out_ch * in_ch)
        .into_par_iter()
        .map(|oi| {
            let (o, i) = (oi / in_ch, oi % in_ch);
            let mut acc = T::zero();
            for b in 0..batch {
                acc += dy.plane(b, o).iter().zip(dw_out.plane(b, i)).map(|(&g, &v)| g * v).sum();
            }
            acc
        })
        .collect();

    // gradient at the depthwise output
    let mut d_dw = Tensor::zeros(ds);
    d_dw.data_mut()
        .par_chunks_mut(ds.plane())
        .enumerate()
        .for_each(|(bi, dst)| {
            let (b, i) = (bi / in_ch, bi % in_ch);
            for o in 0..out_ch {
                let wgt = p.pointwise[o * in_ch + i];
                for (d, &g) in dst.iter_mut().zip(dy.plane(b, o)) {
                    *d += wgt * g;
                }
            }
        });

    let xs = x.shape();
    let pad = conv_geometry(xs, stride)?;
    let (oh, ow) = (pad.out_height, pad.out_width);
    let (h, w) = (xs.height, xs.width);
    let mut dx = Tensor::zeros(xs);
    let partial_dk: Vec<[T; TAPS]> = dx
        .data_mut()
        .par_chunks_mut(xs.plane())
        .enumerate()
        .map(|(bc, dxp)| {
            let c = bc % in_ch;
            let b = bc / in_ch;
            let src = x.plane(b, c);
            let g = d_dw.plane(b, c);
            let kern = &p.depthwise[c * TAPS..(c + 1) * TAPS];
            let mut dk = [T::zero(); TAPS];
            for ky in 0..KERNEL {
                let (ylo, yhi) = tap_range(h, oh, pad.top, stride, ky);
                for kx in 0..KERNEL {
                    let (xlo, xhi) = tap_range(w, ow, pad.left, stride, kx);
                    let wgt = kern[ky * KERNEL + kx];
                    let mut acc = T::zero();
                    for oy in ylo..yhi {
                        let iy = oy * stride + ky - pad.top;
                        for ox in xlo..xhi {
                            let ix = ox * stride + kx - pad.left;
                            let gv = g[oy * ow + ox];
                            dxp[iy * w + ix] += wgt * gv;
                            acc += src[iy * w + ix] * gv;
                        }
                    }
                    dk[ky * KERNEL + kx] = acc;
                }
            }
            dk
        })
        .collect();
    let mut d_depthwise = vec![T::zero(); in_ch * TAPS];
    for (bc, dk) in partial_dk.iter().enumerate() {
        let c = bc % in_ch;
        for (d, &v) in d_depthwise[c * TAPS..(c + 1) * TAPS].iter_mut().zip(dk) {
            *d += v;
        }
    }
    Ok(SeparableGrads {
        dx,
        d_depthwise,
        d_pointwise,
    })
}
