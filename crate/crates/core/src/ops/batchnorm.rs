//! Per-channel batch normalization over (batch, H, W).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: T,
    /// Weight of the old running statistic in each update.
    pub momentum: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Batch statistics kept from a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub x_hat: Tensor<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BnGrads<T> {
    pub dx: Tensor<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    /// Identity affine with running statistics (0, 1).
    pub fn new(channels: usize, momentum: T, epsilon: T) -> Self {
        BatchNorm {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon,
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Inference-mode transform as `y = scale·x + shift` per channel.
    pub fn affine(&self) -> (Vec<T>, Vec<T>) {
        let scale: Vec<T> = self
            .gamma
            .iter()
            .zip(&self.running_var)
            .map(|(&g, &v)| g / (v + self.epsilon).sqrt())
            .collect();
        let shift = self
            .beta
            .iter()
            .zip(&self.running_mean)
            .zip(&scale)
            .map(|((&b, &m), &s)| b - s * m)
            .collect();
        (scale, shift)
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        let c = x.shape().channels;
        let n = self.channels();
        if c != n || self.beta.len() != n || self.running_mean.len() != n || self.running_var.len() != n {
            return Err(Error::Shape(format!(
                "batch norm has {n} channels, input has {c}"
            )));
        }
        Ok(())
    }
}

pub fn batchnorm_forward_infer<T: Scalar>(x: &Tensor<T>, p: &BatchNorm<T>) -> Result<Tensor<T>> {
    p.check(x)?;
    let (scale, shift) = p.affine();
    let s = x.shape();
    let mut y = x.clone();
    for b in 0..s.batch {
        for c in 0..s.channels {
            let (a, k) = (scale[c], shift[c]);
            y.plane_mut(b, c).iter_mut().for_each(|v| *v = a * *v + k);
        }
    }
    Ok(y)
}

/// Normalizes with batch statistics and folds them into the running statistics.
pub fn batchnorm_forward_train<T: Scalar>(
    x: &Tensor<T>,
    p: &mut BatchNorm<T>,
) -> Result<(Tensor<T>, BnCache<T>)> {
    p.check(x)?;
    let s = x.shape();
    let n = T::of((s.batch * s.plane()) as f64);
    let mut mean = vec![T::zero(); s.channels];
    let mut var = vec![T::zero(); s.channels];
    for c in 0..s.channels {
        let sum: T = (0..s.batch).map(|b| x.plane(b, c).iter().copied().sum::<T>()).sum();
        let m = sum / n;
        let sq: T = (0..s.batch)
            .map(|b| x.plane(b, c).iter().map(|&v| (v - m) * (v - m)).sum::<T>())
            .sum();
        mean[c] = m;
        var[c] = sq / n;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + p.epsilon).sqrt()).collect();
    let mut x_hat = x.clone();
    let mut y = x.clone();
    for b in 0..s.batch {
        for c in 0..s.channels {
            let (m, is, g, be) = (mean[c], inv_std[c], p.gamma[c], p.beta[c]);
            for (h, yv) in x_hat.plane_mut(b, c).iter_mut().zip(y.plane_mut(b, c)) {
                *h = (*h - m) * is;
                *yv = g * *h + be;
            }
        }
    }
    let keep = p.momentum;
    let take = T::one() - keep;
    for c in 0..s.channels {
        p.running_mean[c] = keep * p.running_mean[c] + take * mean[c];
        p.running_var[c] = keep * p.running_var[c] + take * var[c];
    }
    Ok((
        y,
        BnCache {
            x_hat,
            mean,
            var,
            inv_std,
        },
    ))
}

/// Dispatches on `mode`; the cache is present only in train mode.
pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor<T>,
    p: &mut BatchNorm<T>,
    mode: BnMode,
) -> Result<(Tensor<T>, Option<BnCache<T>>)> {
    match mode {
        BnMode::Train => batchnorm_forward_train(x, p).map(|(y, c)| (y, Some(c))),
        BnMode::Infer => batchnorm_forward_infer(x, p).map(|y| (y, None)),
    }
}

/// Gradients of a train-mode forward pass.
pub fn batchnorm_backward<T: Scalar>(
    cache: &BnCache<T>,
    p: &BatchNorm<T>,
    dy: &Tensor<T>,
) -> Result<BnGrads<T>> {
    let s = cache.x_hat.shape();
    if dy.shape() != s {
        return Err(Error::Shape(format!("batch norm backward: dy {} vs {s}", dy.shape())));
    }
    let n = T::of((s.batch * s.plane()) as f64);
    let mut dgamma = vec![T::zero(); s.channels];
    let mut dbeta = vec![T::zero(); s.channels];
    for c in 0..s.channels {
        for b in 0..s.batch {
            for (&g, &h) in dy.plane(b, c).iter().zip(cache.x_hat.plane(b, c)) {
                dbeta[c] += g;
                dgamma[c] += g * h;
            }
        }
    }
    let mut dx = Tensor::zeros(s);
    for b in 0..s.batch {
        for c in 0..s.channels {
            let k = p.gamma[c] * cache.inv_std[c] / n;
            let (sb, sg) = (dbeta[c], dgamma[c]);
            let dst = dx.plane_mut(b, c);
            for ((d, &g), &h) in dst.iter_mut().zip(dy.plane(b, c)).zip(cache.x_hat.plane(b, c)) {
                *d = k * (n * g - sb - h * sg);
            }
        }
    }
    Ok(BnGrads { dx, dgamma, dbeta })
}
