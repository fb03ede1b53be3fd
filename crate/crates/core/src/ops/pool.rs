use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Argmax positions of a 2×2/stride-2 max pool, as flat offsets into each input plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: Shape,
    pub argmax: Vec<u32>,
}

/// 2×2 max pooling with stride 2. Ties go to the first element in row-major window order.
pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let s = x.shape();
    if !s.height.is_multiple_of(2) || !s.width.is_multiple_of(2) {
        return Err(Error::Shape(format!("max pool needs even H and W, got {s}")));
    }
    let (oh, ow) = (s.height / 2, s.width / 2);
    let out_shape = s.with_spatial(oh, ow);
    let mut out = Tensor::zeros(out_shape);
    let mut argmax = Vec::with_capacity(out_shape.len());
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = x.plane(b, c);
            let dst = out.plane_mut(b, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (2 * oy) * s.width + 2 * ox;
                    for off in [1, s.width, s.width + 1] {
                        let cand = (2 * oy) * s.width + 2 * ox + off;
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    dst[oy * ow + ox] = src[best];
                    argmax.push(best as u32);
                }
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            input_shape: s,
            argmax,
        },
    ))
}

/// Inference-only 2×2 max pool; same values as [`maxpool_forward`] without
/// recording where they came from.
pub fn maxpool_infer<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if !s.height.is_multiple_of(2) || !s.width.is_multiple_of(2) {
        return Err(Error::Shape(format!("max pool needs even H and W, got {s}")));
    }
    let (oh, ow) = (s.height / 2, s.width / 2);
    let mut out = Tensor::zeros(s.with_spatial(oh, ow));
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = x.plane(b, c);
            let dst = out.plane_mut(b, c);
            for (oy, row) in dst.chunks_exact_mut(ow).enumerate() {
                let top = &src[2 * oy * s.width..(2 * oy + 1) * s.width];
                let bottom = &src[(2 * oy + 1) * s.width..(2 * oy + 2) * s.width];
                for ((d, t), u) in row.iter_mut().zip(top.chunks_exact(2)).zip(bottom.chunks_exact(2)) {
                    // same comparison order as the training pool, so NaN handling agrees
                    let mut best = t[0];
                    for v in [t[1], u[0], u[1]] {
                        if v > best {
                            best = v;
                        }
                    }
                    *d = best;
                }
            }
        }
    }
    Ok(out)
}

pub fn maxpool_backward<T: Scalar>(indices: &PoolIndices, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let s = indices.input_shape;
    if dy.shape() != s.with_spatial(s.height / 2, s.width / 2) {
        return Err(Error::Shape(format!("max pool backward: dy {} for input {s}", dy.shape())));
    }
    let mut dx = Tensor::zeros(s);
    let plane_out = dy.shape().plane();
    for b in 0..s.batch {
        for c in 0..s.channels {
            let g = dy.plane(b, c);
            let base = (b * s.channels + c) * plane_out;
            let dst = dx.plane_mut(b, c);
            for (k, &gv) in g.iter().enumerate() {
                dst[indices.argmax[base + k] as usize] += gv;
            }
        }
    }
    Ok(dx)
}

/// Nearest-neighbour upsampling: each pixel becomes a `factor×factor` block.
pub fn upsample_nearest_forward<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor < 1 {
        return Err(Error::Argument("upsample factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let s = x.shape();
    let out_shape = Shape::new(s.batch, s.channels, s.height * factor, s.width * factor)?;
    let mut out = Tensor::zeros(out_shape);
    let ow = out_shape.width;
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = x.plane(b, c);
            let dst = out.plane_mut(b, c);
            for y in 0..s.height {
                let row = &mut dst[y * factor * ow..(y * factor + 1) * ow];
                for (x_, &v) in src[y * s.width..(y + 1) * s.width].iter().enumerate() {
                    row[x_ * factor..(x_ + 1) * factor].fill(v);
                }
                for r in 1..factor {
                    let (head, tail) = dst.split_at_mut((y * factor + r) * ow);
                    tail[..ow].copy_from_slice(&head[y * factor * ow..(y * factor + 1) * ow]);
                }
            }
        }
    }
    Ok(out)
}

/// Sums each `factor×factor` block of `dy`.
pub fn upsample_nearest_backward<T: Scalar>(dy: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor < 1 {
        return Err(Error::Argument("upsample factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(dy.clone());
    }
    let s = dy.shape();
    if !s.height.is_multiple_of(factor) || !s.width.is_multiple_of(factor) {
        return Err(Error::Shape(format!("{s} is not divisible by upsample factor {factor}")));
    }
    let out_shape = s.with_spatial(s.height / factor, s.width / factor);
    let mut dx = Tensor::zeros(out_shape);
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = dy.plane(b, c);
            let dst = dx.plane_mut(b, c);
            for y in 0..s.height {
                let drow = &mut dst[(y / factor) * out_shape.width..(y / factor + 1) * out_shape.width];
                for (x_, &g) in src[y * s.width..(y + 1) * s.width].iter().enumerate() {
                    drow[x_ / factor] += g;
                }
            }
        }
    }
    Ok(dx)
}
