use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::net::config::{feature_widths, validate_config, NetworkConfig, INPUT_CHANNELS};
use crate::ops::batchnorm::{
    batchnorm_backward, batchnorm_forward_infer, batchnorm_forward_train, BatchNorm, BnCache,
    DEFAULT_EPSILON, DEFAULT_MOMENTUM,
};
use crate::ops::conv::{
    depthwise_forward, pointwise_forward, separable_conv_backward_cached, SeparableConv, TAPS,
};
use crate::ops::pool::{
    maxpool_backward, maxpool_forward, maxpool_infer, upsample_nearest_backward, upsample_nearest_forward,
    PoolIndices,
};
use crate::ops::{relu_backward, relu_forward, softmax_pixelwise_forward};
use crate::rng::seeded;
use crate::tensor::{Precision, Scalar, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Encoder,
    Decoder,
}

/// Structure of one stage, independent of its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StagePlan {
    pub kind: StageKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub relu: bool,
    pub pool: bool,
    pub upsample: usize,
    pub has_bn: bool,
}

/// Stage layout for a configuration.
///
/// Encoder `i` maps `width[i-1] → width[i]` (RGB into the first) at the configured
/// stride and pools on every stage but the last. Decoders run at stride 1; the first
/// upsamples by `S` and the rest by `2·S`, which inverts the mirrored encoder stage.
/// Decoder `j < L` outputs `width[L-j]`, the last outputs the class scores without
/// ReLU or batch norm.
pub fn plan_stages(cfg: &NetworkConfig) -> Vec<StagePlan> {
    let l = cfg.layers;
    let widths = feature_widths(cfg.filters, cfg.multiplier, l);
    let mut plan = Vec::with_capacity(2 * l);
    let mut prev = INPUT_CHANNELS;
    for (i, &w) in widths.iter().enumerate() {
        plan.push(StagePlan {
            kind: StageKind::Encoder,
            in_channels: prev,
            out_channels: w,
            stride: cfg.stride,
            relu: true,
            pool: i + 1 < l,
            upsample: 1,
            has_bn: true,
        });
        prev = w;
    }
    for j in 1..=l {
        let last = j == l;
        let out = if last { cfg.classes } else { widths[l - j - 1] };
        plan.push(StagePlan {
            kind: StageKind::Decoder,
            in_channels: prev,
            out_channels: out,
            stride: 1,
            relu: !last,
            pool: false,
            upsample: if j == 1 { cfg.stride } else { 2 * cfg.stride },
            has_bn: !last,
        });
        prev = out;
    }
    plan
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage<T> {
    pub kind: StageKind,
    pub conv: SeparableConv<T>,
    pub stride: usize,
    pub relu: bool,
    pub pool: bool,
    pub upsample: usize,
    pub bn: Option<BatchNorm<T>>,
}

impl<T: Scalar> Stage<T> {
    pub fn plan(&self) -> StagePlan {
        StagePlan {
            kind: self.kind,
            in_channels: self.conv.in_channels,
            out_channels: self.conv.out_channels,
            stride: self.stride,
            relu: self.relu,
            pool: self.pool,
            upsample: self.upsample,
            has_bn: self.bn.is_some(),
        }
    }

    fn forward_infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let up;
        let x = if self.upsample > 1 {
            up = upsample_nearest_forward(x, self.upsample)?;
            &up
        } else {
            x
        };
        let (dw, _) = depthwise_forward(x, &self.conv.depthwise, self.stride, None)?;
        let (mut h, _) = pointwise_forward(&dw, &self.conv.pointwise, self.conv.out_channels, None)?;
        if self.relu {
            h.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
        }
        if self.pool {
            h = maxpool_infer(&h)?;
        }
        match &self.bn {
            Some(bn) => batchnorm_forward_infer(&h, bn),
            None => Ok(h),
        }
    }
}

/// Per-pixel class probabilities of shape `(batch, C, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap<T> {
    probs: Tensor<T>,
}

impl<T: Scalar> ProbMap<T> {
    pub fn new(probs: Tensor<T>) -> Self {
        ProbMap { probs }
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.probs
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.probs
    }

    pub fn classes(&self) -> usize {
        self.probs.shape().channels
    }

    pub fn height(&self) -> usize {
        self.probs.shape().height
    }

    pub fn width(&self) -> usize {
        self.probs.shape().width
    }

    pub fn batch(&self) -> usize {
        self.probs.shape().batch
    }

    /// Probability plane of `class` for batch entry `b`.
    pub fn class_plane(&self, b: usize, class: usize) -> &[T] {
        self.probs.plane(b, class)
    }

    /// Per-pixel most probable class of batch entry `b`; ties go to the lower class id.
    pub fn argmax(&self, b: usize) -> Vec<u8> {
        let plane = self.probs.shape().plane();
        (0..plane)
            .map(|p| {
                let mut best = 0;
                for c in 1..self.classes() {
                    if self.probs.plane(b, c)[p] > self.probs.plane(b, best)[p] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }
}

/// Intermediate values of one stage kept for the backward pass.
#[derive(Debug)]
struct StageCache<T> {
    upsampled: bool,
    conv_in: Tensor<T>,
    dw_out: Tensor<T>,
    conv_out: Tensor<T>,
    pool: Option<PoolIndices>,
    bn: Option<BnCache<T>>,
}

/// Everything recorded by [`Model::forward_train`].
#[derive(Debug)]
pub struct TrainCache<T> {
    input_bn: BnCache<T>,
    stages: Vec<StageCache<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model<T> {
    pub config: NetworkConfig,
    pub input_norm: BatchNorm<T>,
    pub stages: Vec<Stage<T>>,
}

impl<T: Scalar> Model<T> {
    /// He-initialized model (`N(0, 2/fan_in)`), batch norms at identity with running stats (0, 1).
    pub fn build(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        cfg.check()?;
        let mut rng = seeded(seed);
        let momentum = T::of(DEFAULT_MOMENTUM);
        let epsilon = T::of(DEFAULT_EPSILON);
        let mut normal = |n: usize, fan_in: usize| -> Vec<T> {
            let std = (2.0 / fan_in as f64).sqrt();
            (0..n)
                .map(|_| T::of(std * rng.sample::<f64, _>(StandardNormal)))
                .collect()
        };
        let stages = plan_stages(cfg)
            .into_iter()
            .map(|p| {
                let depthwise = normal(p.in_channels * TAPS, TAPS);
                let pointwise = normal(p.out_channels * p.in_channels, p.in_channels);
                Stage {
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
                    bn: p
                        .has_bn
                        .then(|| BatchNorm::new(p.out_channels, momentum, epsilon)),
                }
            })
            .collect();
        Ok(Model {
            config: *cfg,
            input_norm: BatchNorm::new(INPUT_CHANNELS, momentum, epsilon),
            stages,
        })
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    /// Validates that an input of this shape can be run through the network.
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

    /// Pre-softmax class scores in inference mode.
    pub fn logits(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(image.shape())?;
        let mut h = batchnorm_forward_infer(image, &self.input_norm)?;
        for stage in &self.stages {
            h = stage.forward_infer(&h)?;
        }
        Ok(h)
    }

    /// Inference-mode forward pass ending in the pixelwise softmax.
    pub fn forward(&self, image: &Tensor<T>) -> Result<ProbMap<T>> {
        Ok(ProbMap::new(softmax_pixelwise_forward(&self.logits(image)?)))
    }

    /// Train-mode forward pass: batch statistics are used and running statistics updated.
    /// Returns the logits and the cache needed by [`Model::backward`].
    pub fn forward_train(&mut self, image: &Tensor<T>) -> Result<(Tensor<T>, TrainCache<T>)> {
        self.check_input(image.shape())?;
        let (mut h, input_bn) = batchnorm_forward_train(image, &mut self.input_norm)?;
        let mut caches = Vec::with_capacity(self.stages.len());
        for stage in &mut self.stages {
            let conv_in = upsample_nearest_forward(&h, stage.upsample)?;
            let (dw_out, _) = depthwise_forward(&conv_in, &stage.conv.depthwise, stage.stride, None)?;
            let (conv_out, _) =
                pointwise_forward(&dw_out, &stage.conv.pointwise, stage.conv.out_channels, None)?;
            h = if stage.relu { relu_forward(&conv_out) } else { conv_out.clone() };
            let mut pool = None;
            if stage.pool {
                let (p, idx) = maxpool_forward(&h)?;
                h = p;
                pool = Some(idx);
            }
            let mut bn_cache = None;
            if let Some(bn) = &mut stage.bn {
                let (y, c) = batchnorm_forward_train(&h, bn)?;
                h = y;
                bn_cache = Some(c);
            }
            caches.push(StageCache {
                upsampled: stage.upsample > 1,
                conv_in,
                dw_out,
                conv_out,
                pool,
                bn: bn_cache,
            });
        }
        Ok((
            h,
            TrainCache {
                input_bn,
                stages: caches,
            },
        ))
    }

    /// Parameter gradients for `dlogits`, in the order of [`Model::params`].
    pub fn backward(&self, cache: &TrainCache<T>, dlogits: &Tensor<T>) -> Result<Vec<Vec<T>>> {
        if cache.stages.len() != self.stages.len() {
            return Err(Error::State("train cache does not belong to this model".into()));
        }
        let mut per_stage: Vec<Vec<Vec<T>>> = Vec::with_capacity(self.stages.len());
        let mut g = dlogits.clone();
        for (stage, sc) in self.stages.iter().zip(&cache.stages).rev() {
            let mut grads = Vec::with_capacity(4);
            let mut bn_grads = None;
            if let (Some(bn), Some(bc)) = (&stage.bn, &sc.bn) {
                let r = batchnorm_backward(bc, bn, &g)?;
                g = r.dx;
                bn_grads = Some((r.dgamma, r.dbeta));
            }
            if let Some(idx) = &sc.pool {
                g = maxpool_backward(idx, &g)?;
            }
            if stage.relu {
                g = relu_backward(&sc.conv_out, &g)?;
            }
            let sg = separable_conv_backward_cached(&sc.conv_in, &sc.dw_out, &stage.conv, stage.stride, &g)?;
            g = if sc.upsampled {
                upsample_nearest_backward(&sg.dx, stage.upsample)?
            } else {
                sg.dx
            };
            grads.push(sg.d_depthwise);
            grads.push(sg.d_pointwise);
            if let Some((dg, db)) = bn_grads {
                grads.push(dg);
                grads.push(db);
            }
            per_stage.push(grads);
        }
        let input = batchnorm_backward(&cache.input_bn, &self.input_norm, &g)?;
        let mut out = vec![input.dgamma, input.dbeta];
        for grads in per_stage.into_iter().rev() {
            out.extend(grads);
        }
        Ok(out)
    }

    /// Learnable arrays: input-norm γ, β, then per stage depthwise, pointwise and (if present) γ, β.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![&self.input_norm.gamma, &self.input_norm.beta];
        for s in &self.stages {
            out.push(&s.conv.depthwise);
            out.push(&s.conv.pointwise);
            if let Some(bn) = &s.bn {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![&mut self.input_norm.gamma, &mut self.input_norm.beta];
        for s in &mut self.stages {
            out.push(&mut s.conv.depthwise);
            out.push(&mut s.conv.pointwise);
            if let Some(bn) = &mut s.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Every batch norm in execution order, starting with the input normalization.
    pub fn batch_norms(&self) -> impl Iterator<Item = &BatchNorm<T>> {
        std::iter::once(&self.input_norm).chain(self.stages.iter().filter_map(|s| s.bn.as_ref()))
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let v = |x: &[T]| x.iter().map(|&a| U::of(a.to_f64())).collect::<Vec<U>>();
        let bn = |b: &BatchNorm<T>| BatchNorm {
            gamma: v(&b.gamma),
            beta: v(&b.beta),
            running_mean: v(&b.running_mean),
            running_var: v(&b.running_var),
            epsilon: U::of(b.epsilon.to_f64()),
            momentum: U::of(b.momentum.to_f64()),
        };
        Model {
            config: self.config,
            input_norm: bn(&self.input_norm),
            stages: self
                .stages
                .iter()
                .map(|s| Stage {
                    kind: s.kind,
                    conv: SeparableConv {
                        in_channels: s.conv.in_channels,
                        out_channels: s.conv.out_channels,
                        depthwise: v(&s.conv.depthwise),
                        pointwise: v(&s.conv.pointwise),
                    },
                    stride: s.stride,
                    relu: s.relu,
                    pool: s.pool,
                    upsample: s.upsample,
                    bn: s.bn.as_ref().map(bn),
                })
                .collect(),
        }
    }
}
