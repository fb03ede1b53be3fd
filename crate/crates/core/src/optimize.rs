//! Inference-graph optimization: batch-norm folding and operation counting.
//!
//! In this network family every batch norm sits behind a ReLU (and possibly a
//! max pool), so it cannot be pushed back into the convolution that produced
//! its input. Instead each inference-mode batch norm `y = a·x + b` is pushed
//! forward into the next separable convolution, which is always reached
//! through operations that commute with a per-channel affine map
//! (nearest upsampling, or nothing):
//!
//! * the depthwise kernel of channel `c` is scaled by `a[c]`,
//! * the channel is padded with `-b[c]/a[c]` instead of zero, so that padded
//!   taps still see a normalized value of exactly zero,
//! * the constant `b[c]·Σk[c]` is routed through the pointwise weights into a
//!   per-output bias.
//!
//! The input normalization folds into the first encoder stage the same way.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::net::config::{NetworkConfig, INPUT_CHANNELS};
use crate::net::model::{Model, ProbMap, StageKind, StagePlan};
use crate::ops::batchnorm::BatchNorm;
use crate::ops::conv::{depthwise_forward, pointwise_forward, SeparableConv, TAPS};
use crate::ops::flops::FlopReport;
use crate::ops::pool::{maxpool_infer, upsample_nearest_forward};
use crate::ops::softmax_pixelwise_forward;
use crate::tensor::{Precision, Scalar, Shape, Tensor};
use crate::error::Violation;
use crate::net::config::validate_config;

#[derive(Debug, Clone, PartialEq)]
pub struct FoldedStage<T> {
    pub kind: StageKind,
    pub conv: SeparableConv<T>,
    /// Per-output-channel bias created by folding.
    pub bias: Vec<T>,
    /// Per-input-channel padding value replacing zero padding.
    pub pad: Vec<T>,
    pub stride: usize,
    pub relu: bool,
    pub pool: bool,
    pub upsample: usize,
}

impl<T: Scalar> FoldedStage<T> {
    pub fn plan(&self) -> StagePlan {
        StagePlan {
            kind: self.kind,
            in_channels: self.conv.in_channels,
            out_channels: self.conv.out_channels,
            stride: self.stride,
            relu: self.relu,
            pool: self.pool,
            upsample: self.upsample,
            has_bn: false,
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let up;
        let x = if self.upsample > 1 {
            up = upsample_nearest_forward(x, self.upsample)?;
            &up
        } else {
            x
        };
        let pad = self.pad.iter().any(|&p| p != T::zero()).then_some(self.pad.as_slice());
        let (dw, _) = depthwise_forward(x, &self.conv.depthwise, self.stride, pad)?;
        let (mut h, _) =
            pointwise_forward(&dw, &self.conv.pointwise, self.conv.out_channels, Some(&self.bias))?;
        if self.relu {
            h.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
        }
        if self.pool {
            h = maxpool_infer(&h)?;
        }
        Ok(h)
    }
}

/// A model with every batch norm absorbed into convolution weights, biases and padding values.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedModel<T> {
    pub config: NetworkConfig,
    pub stages: Vec<FoldedStage<T>>,
}

impl<T: Scalar> FoldedModel<T> {
    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn check_input(&self, shape: Shape) -> Result<()> {
        if shape.channels != INPUT_CHANNELS {
            return Err(Violation::InputChannels {
                expected: INPUT_CHANNELS,
                found: shape.channels,
            }
            .into());
        }
        validate_config(&self.config, shape.height, shape.width)?;
        Ok(())
    }

    pub fn logits(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(image.shape())?;
        let mut h: Option<Tensor<T>> = None;
        for s in &self.stages {
            h = Some(s.forward(h.as_ref().unwrap_or(image))?);
        }
        h.ok_or_else(|| Error::Shape("folded model has no stages".into()))
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<ProbMap<T>> {
        Ok(ProbMap::new(softmax_pixelwise_forward(&self.logits(image)?)))
    }

    /// Number of inference-mode batch norm stages left (always zero).
    pub fn batch_norm_count(&self) -> usize {
        0
    }
}

/// Anything that can be turned into a [`FoldedModel`].
pub trait FoldBatchNorm<T> {
    fn fold_batchnorm(&self) -> Result<FoldedModel<T>>;
}

impl<T: Scalar> FoldBatchNorm<T> for FoldedModel<T> {
    fn fold_batchnorm(&self) -> Result<FoldedModel<T>> {
        Ok(self.clone())
    }
}

fn checked_affine<T: Scalar>(bn: &BatchNorm<T>, what: &str) -> Result<(Vec<T>, Vec<T>)> {
    let stats_ok = bn.running_mean.iter().all(|m| m.is_finite())
        && bn.running_var.iter().all(|v| v.is_finite() && *v >= T::zero());
    if !stats_ok || !(bn.epsilon > T::zero()) {
        return Err(Error::State(format!("{what}: running statistics are not populated")));
    }
    let (scale, shift) = bn.affine();
    if scale.iter().any(|s| *s == T::zero() || !s.is_finite()) {
        return Err(Error::State(format!("{what}: a zero scale cannot be folded")));
    }
    Ok((scale, shift))
}

impl<T: Scalar> FoldBatchNorm<T> for Model<T> {
    fn fold_batchnorm(&self) -> Result<FoldedModel<T>> {
        let mut pending = Some(checked_affine(&self.input_norm, "input normalization")?);
        let mut stages = Vec::with_capacity(self.stages.len());
        for (i, st) in self.stages.iter().enumerate() {
            let in_ch = st.conv.in_channels;
            let mut conv = st.conv.clone();
            let mut bias = vec![T::zero(); conv.out_channels];
            let mut pad = vec![T::zero(); in_ch];
            if let Some((scale, shift)) = pending.take() {
                for c in 0..in_ch {
                    let kernel = &mut conv.depthwise[c * TAPS..(c + 1) * TAPS];
                    let ksum: T = kernel.iter().copied().sum();
                    kernel.iter_mut().for_each(|k| *k *= scale[c]);
                    pad[c] = -shift[c] / scale[c];
                    for (o, b) in bias.iter_mut().enumerate() {
                        *b += conv.pointwise[o * in_ch + c] * shift[c] * ksum;
                    }
                }
            }
            if let Some(bn) = &st.bn {
                pending = Some(checked_affine(bn, &format!("stage {i}"))?);
            }
            stages.push(FoldedStage {
                kind: st.kind,
                conv,
                bias,
                pad,
                stride: st.stride,
                relu: st.relu,
                pool: st.pool,
                upsample: st.upsample,
            });
        }
        if pending.is_some() {
            return Err(Error::State("trailing batch norm has no convolution to fold into".into()));
        }
        Ok(FoldedModel {
            config: self.config,
            stages,
        })
    }
}

pub fn fold_batchnorm<T: Scalar, M: FoldBatchNorm<T>>(model: &M) -> Result<FoldedModel<T>> {
    model.fold_batchnorm()
}

/// Multiply-add counts of one stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageOps {
    pub kind: StageKind,
    pub conv_input: (usize, usize),
    pub output: (usize, usize),
    pub conv: FlopReport,
    /// One multiply-add per normalized element.
    pub batch_norm: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpCount {
    pub height: usize,
    pub width: usize,
    pub input_norm: u64,
    pub stages: Vec<StageOps>,
    pub total: u64,
    pub total_full_equivalent: u64,
}

pub trait CountOps {
    /// Multiply-adds of one forward pass at `height×width`.
    fn count_ops(&self, height: usize, width: usize) -> Result<OpCount>;
}

fn count(plans: &[StagePlan], input_norm: bool, height: usize, width: usize) -> Result<OpCount> {
    let (mut h, mut w) = (height, width);
    let input_norm = if input_norm { (INPUT_CHANNELS * h * w) as u64 } else { 0 };
    let mut stages = Vec::with_capacity(plans.len());
    for p in plans {
        let (ch, cw) = (h * p.upsample, w * p.upsample);
        let (oh, ow) = (ch.div_ceil(p.stride), cw.div_ceil(p.stride));
        let spatial = (oh * ow) as u64;
        let (i, o) = (p.in_channels as u64, p.out_channels as u64);
        let conv = FlopReport::new(o * i * TAPS as u64 * spatial, i * TAPS as u64 * spatial + o * i * spatial);
        (h, w) = if p.pool { (oh / 2, ow / 2) } else { (oh, ow) };
        let batch_norm = if p.has_bn { o * (h * w) as u64 } else { 0 };
        stages.push(StageOps {
            kind: p.kind,
            conv_input: (ch, cw),
            output: (h, w),
            conv,
            batch_norm,
        });
    }
    let total = input_norm
        + stages
            .iter()
            .map(|s| s.conv.multiply_adds_separable + s.batch_norm)
            .sum::<u64>();
    let total_full_equivalent = stages.iter().map(|s| s.conv.multiply_adds_full).sum();
    Ok(OpCount {
        height,
        width,
        input_norm,
        stages,
        total,
        total_full_equivalent,
    })
}

impl<T: Scalar> CountOps for Model<T> {
    fn count_ops(&self, height: usize, width: usize) -> Result<OpCount> {
        validate_config(&self.config, height, width)?;
        let plans: Vec<_> = self.stages.iter().map(|s| s.plan()).collect();
        count(&plans, true, height, width)
    }
}

impl<T: Scalar> CountOps for FoldedModel<T> {
    fn count_ops(&self, height: usize, width: usize) -> Result<OpCount> {
        validate_config(&self.config, height, width)?;
        let plans: Vec<_> = self.stages.iter().map(|s| s.plan()).collect();
        count(&plans, false, height, width)
    }
}
