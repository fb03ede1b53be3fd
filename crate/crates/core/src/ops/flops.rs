use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multiply-add counts of one convolution, full versus depthwise-separable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopReport {
    pub multiply_adds_full: u64,
    pub multiply_adds_separable: u64,
    pub ratio: f64,
}

impl FlopReport {
    pub fn new(full: u64, separable: u64) -> Self {
        FlopReport {
            multiply_adds_full: full,
            multiply_adds_separable: separable,
            ratio: if full == 0 { 0.0 } else { separable as f64 / full as f64 },
        }
    }
}

/// Closed-form counts for a 3×3 convolution over an `H×W` input at `stride`.
pub fn flops_separable(
    in_ch: usize,
    out_ch: usize,
    height: usize,
    width: usize,
    stride: usize,
) -> Result<FlopReport> {
    if [in_ch, out_ch, height, width, stride].contains(&0) {
        return Err(Error::Argument("flop counts need every dimension >= 1".into()));
    }
    let k2 = 9u64;
    let spatial = (height.div_ceil(stride) * width.div_ceil(stride)) as u64;
    let (i, o) = (in_ch as u64, out_ch as u64);
    Ok(FlopReport::new(o * i * k2 * spatial, i * k2 * spatial + o * i * spatial))
}

/// Relative cost `1/N + 1/K²` of a separable versus a full convolution.
pub fn cost_ratio(out_features: usize, kernel: usize) -> Result<f64> {
    if out_features == 0 || kernel == 0 {
        return Err(Error::Argument("cost ratio needs N >= 1 and K >= 1".into()));
    }
    Ok(1.0 / out_features as f64 + 1.0 / (kernel * kernel) as f64)
}
