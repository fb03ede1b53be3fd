//! Central finite-difference checks of every hand-written backward pass, in double precision.
//! Shared by the gradient tests and the acceptance run.
//!
//! Each op is reduced to the scalar `L = Σ w ⊙ f(x)` with random weights `w`, so
//! the analytic gradient is the op's backward applied to `dy = w`. The error is
//! `max |analytic − numeric| / max |numeric|` over the checked entries.

use minseg::data::Mask;
use minseg::net::ProbMap;
use minseg::ops::*;
use minseg::train::cross_entropy_loss;
use minseg::{Model, NetworkConfig, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const SEEDS: u64 = 20;
const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9)
}

fn normal(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

fn tensor(r: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_vec(shape, normal(r, shape.len())).unwrap()
}

fn dot(a: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    a.data().iter().zip(w.data()).map(|(x, y)| x * y).sum()
}

/// Numeric gradient of `f` at `x`, over the indices in `which`.
fn numeric(x: &[f64], which: &[usize], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut v = x.to_vec();
    which
        .iter()
        .map(|&i| {
            let orig = v[i];
            v[i] = orig + H;
            let up = f(&v);
            v[i] = orig - H;
            let down = f(&v);
            v[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0f64, |m, v| m.max(v.abs())).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .fold(0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

fn check(worst: &mut f64, analytic: &[f64], x: &[f64], f: impl FnMut(&[f64]) -> f64) {
    let all: Vec<usize> = (0..x.len()).collect();
    let n = numeric(x, &all, f);
    *worst = worst.max(rel_err(analytic, &n));
}

fn small_shape(r: &mut ChaCha8Rng) -> Shape {
    Shape::new(r.random_range(1..=2), r.random_range(1..=3), r.random_range(3..=6), r.random_range(3..=6)).unwrap()
}

/// Worst relative error of dx, d_depthwise and d_pointwise.
pub fn separable_conv() -> f64 {
    let mut worst = 0f64;
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let s = if seed < 2 { Shape::new(1, 2, 6, 6).unwrap() } else { small_shape(&mut r) };
        let stride = if seed % 2 == 0 { 1 } else { 2 };
        let out_ch = r.random_range(1..=3);
        let p = SeparableConv {
            in_channels: s.channels,
            out_channels: out_ch,
            depthwise: normal(&mut r, s.channels * 9),
            pointwise: normal(&mut r, out_ch * s.channels),
        };
        let x = tensor(&mut r, s);
        let y = separable_conv_forward(&x, &p, stride).unwrap();
        let w = tensor(&mut r, y.shape());
        let g = separable_conv_backward(&x, &p, stride, &w).unwrap();

        check(&mut worst, g.dx.data(), x.data(), |v| {
            let xv = Tensor::from_vec(s, v.to_vec()).unwrap();
            dot(&separable_conv_forward(&xv, &p, stride).unwrap(), &w)
        });
        check(&mut worst, &g.d_depthwise, &p.depthwise, |v| {
            let q = SeparableConv { depthwise: v.to_vec(), ..p.clone() };
            dot(&separable_conv_forward(&x, &q, stride).unwrap(), &w)
        });
        check(&mut worst, &g.d_pointwise, &p.pointwise, |v| {
            let q = SeparableConv { pointwise: v.to_vec(), ..p.clone() };
            dot(&separable_conv_forward(&x, &q, stride).unwrap(), &w)
        });
    }
    worst
}

pub fn relu() -> f64 {
    let mut worst = 0f64;
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let s = small_shape(&mut r);
        // keep inputs away from the kink
        let x = tensor(&mut r, s).map(|v| if v.abs() < 1e-3 { v + 0.01 } else { v });
        let w = tensor(&mut r, s);
        let dx = relu_backward(&x, &w).unwrap();
        let all: Vec<usize> = (0..x.data().len()).collect();
        let n = numeric(x.data(), &all, |v| dot(&relu_forward(&Tensor::from_vec(s, v.to_vec()).unwrap()), &w));
        worst = worst.max(rel_err(dx.data(), &n));
    }
    worst
}

pub fn maxpool() -> f64 {
    let mut worst = 0f64;
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let s = Shape::new(r.random_range(1..=2), r.random_range(1..=3), 2 * r.random_range(1..=4), 2 * r.random_range(1..=4)).unwrap();
        let x = tensor(&mut r, s);
        let (y, idx) = maxpool_forward(&x).unwrap();
        let w = tensor(&mut r, y.shape());
        let dx = maxpool_backward(&idx, &w).unwrap();
        check(&mut worst, dx.data(), x.data(), |v| {
            dot(&maxpool_forward(&Tensor::from_vec(s, v.to_vec()).unwrap()).unwrap().0, &w)
        });
    }
    worst
}

pub fn upsample() -> f64 {
    let mut worst = 0f64;
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let s = small_shape(&mut r);
        let factor = r.random_range(1..=4);
        let x = tensor(&mut r, s);
        let y = upsample_nearest_forward(&x, factor).unwrap();
        let w = tensor(&mut r, y.shape());
        let dx = upsample_nearest_backward(&w, factor).unwrap();
        check(&mut worst, dx.data(), x.data(), |v| {
            dot(&upsample_nearest_forward(&Tensor::from_vec(s, v.to_vec()).unwrap(), factor).unwrap(), &w)
        });
    }
    worst
}

pub fn batchnorm_train_mode() -> f64 {
    let mut worst = 0f64;
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let mut s = small_shape(&mut r);
        s.batch = 2;
        let mut p = BatchNorm::<f64>::new(s.channels, 0.9, 1e-5);
        p.gamma = normal(&mut r, s.channels);
        p.beta = normal(&mut r, s.channels);
        let x = tensor(&mut r, s);
        let (y, cache) = batchnorm_forward_train(&x, &mut p.clone()).unwrap();
        let w = tensor(&mut r, y.shape());
        let g = batchnorm_backward(&cache, &p, &w).unwrap();
        let run = |x: &Tensor<f64>, p: &BatchNorm<f64>| dot(&batchnorm_forward_train(x, &mut p.clone()).unwrap().0, &w);
        check(&mut worst, g.dx.data(), x.data(), |v| run(&Tensor::from_vec(s, v.to_vec()).unwrap(), &p));
        check(&mut worst, &g.dgamma, &p.gamma, |v| {
            run(&x, &BatchNorm { gamma: v.to_vec(), ..p.clone() })
        });
        check(&mut worst, &g.dbeta, &p.beta, |v| {
            run(&x, &BatchNorm { beta: v.to_vec(), ..p.clone() })
        });
    }
    worst
}

fn random_targets(r: &mut ChaCha8Rng, s: Shape) -> Vec<Mask> {
    (0..s.batch)
        .map(|_| {
            let data = (0..s.plane()).map(|_| r.random_range(0..s.channels as u8)).collect();
            Mask::from_vec(s.height, s.width, data).unwrap()
        })
        .collect()
}

pub fn softmax_cross_entropy() -> f64 {
    let mut worst = 0f64;
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let mut s = small_shape(&mut r);
        s.channels = r.random_range(2..=4);
        let logits = tensor(&mut r, s).map(|v| 3.0 * v);
        let targets = random_targets(&mut r, s);
        let refs: Vec<&Mask> = targets.iter().collect();
        let loss = |v: &[f64]| {
            let probs = ProbMap::new(softmax_pixelwise_forward(&Tensor::from_vec(s, v.to_vec()).unwrap()));
            cross_entropy_loss(&probs, &refs).unwrap().0
        };
        let probs = ProbMap::new(softmax_pixelwise_forward(&logits));
        let (_, dlogits) = cross_entropy_loss(&probs, &refs).unwrap();
        let all: Vec<usize> = (0..logits.data().len()).collect();
        worst = worst.max(rel_err(dlogits.data(), &numeric(logits.data(), &all, loss)));
    }
    worst
}

/// Four random entries of every parameter array, through a whole network.
pub fn whole_model() -> f64 {
    let mut worst = 0f64;
    // batch norms need enough values per channel at the bottleneck to stay well conditioned
    let cases = [("L3F3M1.25S1C3", 2, 16), ("L3F3M1.25S2C3", 2, 128), ("L4F3M1.5S1C3", 2, 32)];
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (name, batch, size) = cases[seed as usize % cases.len()];
        let cfg: NetworkConfig = name.parse().unwrap();
        let model = Model::<f64>::build(&cfg, seed).unwrap();
        let mut model = model;
        for p in model.params_mut() {
            for v in p.iter_mut() {
                *v += 0.1 * r.sample::<f64, _>(StandardNormal);
            }
        }
        let s = Shape::new(batch, 3, size, size).unwrap();
        let x = tensor(&mut r, s);
        let w = tensor(&mut r, s.with_channels(3));
        let loss_of = |m: &Model<f64>| dot(&m.clone().forward_train(&x).unwrap().0, &w);
        let (_, cache) = model.clone().forward_train(&x).unwrap();
        let dlogits = w.clone();
        let grads = model.backward(&cache, &dlogits).unwrap();
        let arrays = model.params().len();
        assert_eq!(grads.len(), arrays);
        for a in 0..arrays {
            let values = model.params()[a].to_vec();
            let which: Vec<usize> = (0..4).map(|_| r.random_range(0..values.len())).collect();
            let n = numeric(&values, &which, |v| {
                let mut m = model.clone();
                m.params_mut()[a].copy_from_slice(v);
                loss_of(&m)
            });
            let analytic: Vec<f64> = which.iter().map(|&i| grads[a][i]).collect();
            worst = worst.max(rel_err(&analytic, &n));
        }
    }
    worst
}

/// `(name, worst relative error, tolerance)` for every check.
pub fn suite() -> Vec<(&'static str, f64, f64)> {
    vec![
        ("separable conv", separable_conv(), TOL),
        ("relu", relu(), 1e-6),
        ("max pool", maxpool(), TOL),
        ("upsample", upsample(), TOL),
        ("batch norm", batchnorm_train_mode(), TOL),
        ("softmax cross-entropy", softmax_cross_entropy(), 1e-5),
        ("whole model", whole_model(), TOL),
    ]
}
