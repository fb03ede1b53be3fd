//! Slow, obviously-correct reference implementations used as test oracles.

use std::collections::VecDeque;

use minseg::data::Mask;
use minseg::eval::{theta_at, threshold_mask, ConfusionCounts, Region, SWEEP_STEPS};
use minseg::ops::{full_conv_forward, separable_conv_forward, softmax_pixelwise_forward, SeparableConv};
use minseg::{ProbMap, Scalar, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ 0xa5a5)
}

fn normal(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

fn max_rel<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let scale = b.data().iter().fold(0f64, |m, v| m.max(Scalar::to_f64(*v).abs())).max(1e-30);
    a.data()
        .iter()
        .zip(b.data())
        .fold(0f64, |m, (x, y)| m.max((Scalar::to_f64(*x) - Scalar::to_f64(*y)).abs()))
        / scale
}

/// Separable conv against a full conv with the reconstructed kernel, one random
/// case. Returns the relative errors in single and double precision.
pub fn factorization_case(seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let s = Shape::new(r.random_range(1..=2), r.random_range(1..=8), r.random_range(1..=12), r.random_range(1..=12)).unwrap();
    let out = r.random_range(1..=8);
    let stride = r.random_range(1..=2);
    let p = SeparableConv {
        in_channels: s.channels,
        out_channels: out,
        depthwise: normal(&mut r, s.channels * 9),
        pointwise: normal(&mut r, out * s.channels),
    };
    let x = Tensor::from_vec(s, normal(&mut r, s.len())).unwrap();
    let e64 = max_rel(
        &separable_conv_forward(&x, &p, stride).unwrap(),
        &full_conv_forward(&x, &p.to_full_weights(), out, stride).unwrap(),
    );
    let p32 = SeparableConv::<f32> {
        in_channels: p.in_channels,
        out_channels: p.out_channels,
        depthwise: p.depthwise.iter().map(|&v| v as f32).collect(),
        pointwise: p.pointwise.iter().map(|&v| v as f32).collect(),
    };
    let x32: Tensor<f32> = x.cast();
    let e32 = max_rel(
        &separable_conv_forward(&x32, &p32, stride).unwrap(),
        &full_conv_forward(&x32, &p32.to_full_weights(), out, stride).unwrap(),
    );
    (e32, e64)
}

/// Random probability maps (softmax of scaled noise) and blobby targets.
pub fn random_eval_set(seed: u64, images: usize, classes: usize) -> (Vec<ProbMap<f32>>, Vec<Mask>) {
    let mut r = rng(seed);
    let (h, w) = (r.random_range(4..=24), r.random_range(4..=24));
    let mut probs = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..images {
        let mut target = Mask::new(h, w);
        for _ in 0..r.random_range(0..=3) {
            let c = r.random_range(1..classes) as u8;
            let (y0, x0) = (r.random_range(0..h), r.random_range(0..w));
            let (y1, x1) = ((y0 + r.random_range(1..=h / 2 + 1)).min(h), (x0 + r.random_range(1..=w / 2 + 1)).min(w));
            for y in y0..y1 {
                for x in x0..x1 {
                    target.set(y, x, c);
                }
            }
        }
        // logits correlated with the target so the sweep has a real optimum
        let mut logits = Vec::with_capacity(classes * h * w);
        for c in 0..classes {
            for i in 0..h * w {
                let hit = f64::from(u8::from(target.data[i] as usize == c));
                logits.push((2.0 * hit + 1.5 * r.sample::<f64, _>(StandardNormal)) as f32);
            }
        }
        let t = Tensor::from_vec(Shape::new(1, classes, h, w).unwrap(), logits).unwrap();
        probs.push(ProbMap::new(softmax_pixelwise_forward(&t)));
        targets.push(target);
    }
    (probs, targets)
}

/// Thresholds every image at every grid θ and keeps the best aggregate IoU
/// (smallest θ on ties).
pub fn brute_force_sweep(probs: &[ProbMap<f32>], targets: &[Mask], class: usize) -> (f64, f64, ConfusionCounts) {
    let mut best: Option<(f64, f64, ConfusionCounts)> = None;
    for k in 1..=SWEEP_STEPS {
        let theta = theta_at(k);
        let mut total = ConfusionCounts::default();
        for (p, t) in probs.iter().zip(targets) {
            let pred = threshold_mask(p, 0, class, theta).unwrap();
            total.add(ConfusionCounts::from_masks(&pred, &t.binary(class as u8)).unwrap());
        }
        let iou = total.iou();
        if best.is_none_or(|(_, b, _)| iou > b) {
            best = Some((theta, iou, total));
        }
    }
    best.unwrap()
}

/// Masks with a mix of noise and rectangles over up to three classes.
pub fn random_mask(seed: u64) -> Mask {
    let mut r = rng(seed);
    let (h, w) = (r.random_range(1..=40), r.random_range(1..=40));
    let density = r.random_range(0.0..0.7);
    let classes = r.random_range(1..=3u8);
    let mut m = Mask::new(h, w);
    for y in 0..h {
        for x in 0..w {
            if r.random_bool(density) {
                m.set(y, x, r.random_range(1..=classes));
            }
        }
    }
    for _ in 0..r.random_range(0..4) {
        let (y0, x0) = (r.random_range(0..h), r.random_range(0..w));
        let v = r.random_range(1..=classes);
        for y in y0..(y0 + r.random_range(1..=8)).min(h) {
            for x in x0..(x0 + r.random_range(1..=8)).min(w) {
                m.set(y, x, v);
            }
        }
    }
    m
}

/// Breadth-first flood fill from each unvisited pixel in row-major order.
pub fn flood_fill(mask: &Mask) -> (Vec<u32>, Vec<Region>) {
    let (h, w) = (mask.height, mask.width);
    let mut labels = vec![0u32; h * w];
    let mut regions = Vec::new();
    for start in 0..h * w {
        let v = mask.data[start];
        if v == 0 || labels[start] != 0 {
            continue;
        }
        let id = regions.len() as u32 + 1;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let (mut n, mut sx, mut sy) = (0usize, 0f64, 0f64);
        let mut queue = VecDeque::from([start]);
        labels[start] = id;
        while let Some(i) = queue.pop_front() {
            let (y, x) = (i / w, i % w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
            n += 1;
            sx += x as f64 + 0.5;
            sy += y as f64 + 0.5;
            let mut visit = |j: usize| {
                if mask.data[j] == v && labels[j] == 0 {
                    labels[j] = id;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        regions.push(Region {
            class_id: v,
            x0,
            y0,
            x1,
            y1,
            pixels: n,
            centroid: (sx / n as f64, sy / n as f64),
        });
    }
    (labels, regions)
}

/// Label arrays identical and regions equal, centroids to rounding.
pub fn same_components(a: &(Vec<u32>, Vec<Region>), b: &(Vec<u32>, Vec<Region>)) -> bool {
    a.0 == b.0
        && a.1.len() == b.1.len()
        && a.1.iter().zip(&b.1).all(|(p, q)| {
            (p.class_id, p.x0, p.y0, p.x1, p.y1, p.pixels) == (q.class_id, q.x0, q.y0, q.x1, q.y1, q.pixels)
                && (p.centroid.0 - q.centroid.0).abs() < 1e-9
                && (p.centroid.1 - q.centroid.1).abs() < 1e-9
        })
}
