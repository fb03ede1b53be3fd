//! Mini-batch SGD with momentum and inverse-time learning-rate decay on a
//! pixelwise cross-entropy loss.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::annotations::BALL;
use crate::data::{DatasetSplit, Mask, Sample};
use crate::error::{Error, Result};
use crate::eval::SweepAccumulator;
use crate::net::{Model, ProbMap};
use crate::ops::softmax_pixelwise_forward;
use crate::rng::derived;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lr0: f64,
    pub decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lr0: 0.1,
            decay: 0.004,
            momentum: 0.9,
            batch_size: 10,
            epochs: 25,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn check(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Argument(format!("learning rate {} must be positive", self.lr0)));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(Error::Argument(format!("decay {} must be non-negative", self.decay)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Argument(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// `lr0 / (1 + decay · step)`, counting parameter updates from 0.
pub fn lr_at(step: usize, h: &Hyperparams) -> f64 {
    h.lr0 / (1.0 + h.decay * step as f64)
}

pub const PROB_FLOOR: f64 = 1e-12;

/// Mean pixelwise cross-entropy over all batch entries and the fused
/// softmax gradient `(p − onehot) / pixels` with respect to the logits.
pub fn cross_entropy_loss<T: Scalar>(probs: &ProbMap<T>, targets: &[&Mask]) -> Result<(f64, Tensor<T>)> {
    if targets.len() != probs.batch() {
        return Err(Error::Shape(format!("{} targets for a batch of {}", targets.len(), probs.batch())));
    }
    let c = probs.classes();
    let pixels = probs.batch() * probs.height() * probs.width();
    let scale = T::of(1.0 / pixels as f64);
    let mut grad = probs.tensor().map(|p| p * scale);
    let mut loss = 0.0;
    for (b, t) in targets.iter().enumerate() {
        if (t.height, t.width) != (probs.height(), probs.width()) {
            return Err(Error::Shape(format!(
                "target {}×{} vs probabilities {}×{}",
                t.width,
                t.height,
                probs.width(),
                probs.height()
            )));
        }
        for (p, &class) in t.data.iter().enumerate() {
            let class = class as usize;
            if class >= c {
                return Err(Error::Argument(format!("target class {class} for {c} classes")));
            }
            loss -= probs.class_plane(b, class)[p].to_f64().max(PROB_FLOOR).ln();
            grad.plane_mut(b, class)[p] -= scale;
        }
    }
    Ok((loss / pixels as f64, grad))
}

/// `v ← momentum·v − lr·g; p ← p + v` for every array.
pub fn sgd_momentum_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[Vec<T>],
    velocity: &mut [Vec<T>],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Shape(format!(
            "{} parameter arrays, {} gradients, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    let (lr, m) = (T::of(lr), T::of(momentum));
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        if p.len() != g.len() || p.len() != v.len() {
            return Err(Error::Shape(format!(
                "parameter of {} values with gradient of {} and velocity of {}",
                p.len(),
                g.len(),
                v.len()
            )));
        }
        for ((p, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *v = m * *v - lr * g;
            *p += *v;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_theta: Option<f64>,
    pub val_iou: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn total_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.seconds).sum()
    }

    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("record serializes") + "\n")
            .collect()
    }

    pub fn read_jsonl(text: &str) -> Result<Self> {
        let epochs = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(TrainHistory { epochs })
    }
}

/// Appends one JSON line per record to a file.
pub fn append_jsonl(path: impl AsRef<Path>, record: &EpochRecord) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(record)?)?;
    Ok(())
}

fn batch_input<T: Scalar>(samples: &[&Sample]) -> Result<Tensor<T>> {
    let images: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.image).collect();
    let x = Tensor::stack(&images)?;
    Ok(x.cast())
}

fn check_resolution(split: &DatasetSplit<Sample>) -> Result<(usize, usize)> {
    let first = split
        .train
        .first()
        .ok_or_else(|| Error::Argument("training set is empty".into()))?;
    let res = (first.height(), first.width());
    for s in split.train.iter().chain(&split.validation) {
        if (s.height(), s.width()) != res {
            return Err(Error::Argument(format!(
                "mixed resolutions: {}×{} and {}×{}",
                res.1,
                res.0,
                s.width(),
                s.height()
            )));
        }
    }
    Ok(res)
}

/// Validation loss and swept ball IoU in inference mode.
pub fn validate<T: Scalar>(model: &Model<T>, samples: &[Sample], batch_size: usize) -> Result<(f64, f64, f64)> {
    let mut acc = SweepAccumulator::new(BALL as usize);
    let mut loss = 0.0;
    let mut pixels = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let probs = model.forward(&batch_input::<T>(&refs)?)?;
        let targets: Vec<&Mask> = chunk.iter().map(|s| &s.target).collect();
        let (l, _) = cross_entropy_loss(&probs, &targets)?;
        let n = chunk.len() * chunk[0].height() * chunk[0].width();
        loss += l * n as f64;
        pixels += n;
        acc.add(&probs, &targets)?;
    }
    let best = acc.best()?;
    Ok((loss / pixels as f64, best.theta, best.iou))
}

/// Callback run after every epoch with the current model, e.g. for checkpoints.
pub type EpochObserver<'a, T> = dyn FnMut(&Model<T>, &EpochRecord) -> Result<()> + 'a;

pub fn train<T: Scalar>(model: Model<T>, split: &DatasetSplit<Sample>, h: &Hyperparams) -> Result<(Model<T>, TrainHistory)> {
    train_with(model, split, h, &mut |_, _| Ok(()))
}

/// Trains for `h.epochs` epochs: seeded shuffle per epoch, batch-norm in train
/// mode, short final batch kept, validation after every epoch.
pub fn train_with<T: Scalar>(
    mut model: Model<T>,
    split: &DatasetSplit<Sample>,
    h: &Hyperparams,
    observer: &mut EpochObserver<'_, T>,
) -> Result<(Model<T>, TrainHistory)> {
    h.check()?;
    let (height, width) = check_resolution(split)?;
    model.check_input(crate::tensor::Shape::new(1, 3, height, width)?)?;
    if let Some(s) = split.train.iter().find(|s| s.target.max_class() as usize >= model.classes()) {
        return Err(Error::Argument(format!(
            "target class {} for a {}-class model",
            s.target.max_class(),
            model.classes()
        )));
    }
    let mut velocity: Vec<Vec<T>> = model.params().iter().map(|p| vec![T::zero(); p.len()]).collect();
    let mut history = TrainHistory::default();
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    for epoch in 1..=h.epochs {
        let start = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut derived(h.seed, epoch as u64));
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut lr = lr_at(step, h);
        for (batch_index, idx) in order.chunks(h.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &split.train[i]).collect();
            let x = batch_input::<T>(&batch)?;
            let (logits, cache) = model.forward_train(&x)?;
            let probs = ProbMap::new(softmax_pixelwise_forward(&logits));
            let targets: Vec<&Mask> = batch.iter().map(|s| &s.target).collect();
            let (loss, dlogits) = cross_entropy_loss(&probs, &targets)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step: batch_index + 1,
                    loss,
                });
            }
            let grads = model.backward(&cache, &dlogits)?;
            lr = lr_at(step, h);
            sgd_momentum_step(&mut model.params_mut(), &grads, &mut velocity, lr, h.momentum)?;
            if model.params().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence {
                    epoch,
                    step: batch_index + 1,
                    loss: f64::NAN,
                });
            }
            step += 1;
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let (val_loss, val_theta, val_iou) = if split.validation.is_empty() {
            (None, None, None)
        } else {
            let (l, t, i) = validate(&model, &split.validation, h.batch_size)?;
            (Some(l), Some(t), Some(i))
        };
        let record = EpochRecord {
            epoch,
            steps: step,
            lr,
            train_loss: loss_sum / seen as f64,
            val_loss,
            val_theta,
            val_iou,
            seconds: start.elapsed().as_secs_f64(),
        };
        observer(&model, &record)?;
        history.epochs.push(record);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::synth_dataset;
    use crate::data::{split_dataset, DEFAULT_RATIOS};
    use crate::net::NetworkConfig;
    use crate::tensor::Shape;

    fn probmap(values: Vec<f64>, c: usize, h: usize, w: usize) -> ProbMap<f64> {
        ProbMap::new(Tensor::from_vec(Shape::new(1, c, h, w).unwrap(), values).unwrap())
    }

    #[test]
    fn loss_values() {
        let t = Mask::from_vec(1, 2, vec![0, 1]).unwrap();
        let (l, g) = cross_entropy_loss(&probmap(vec![1.0, 0.0, 0.0, 1.0], 2, 1, 2), &[&t]).unwrap();
        assert!(l.abs() < 1e-12);
        assert!(g.data().iter().all(|v| v.abs() < 1e-12));
        let (l, _) = cross_entropy_loss(&probmap(vec![0.5; 4], 2, 1, 2), &[&t]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let wrong = Mask::new(2, 2);
        assert!(matches!(
            cross_entropy_loss(&probmap(vec![0.5; 4], 2, 1, 2), &[&wrong]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn lr_schedule() {
        let h = Hyperparams::default();
        assert_eq!(lr_at(0, &h), 0.1);
        assert!((lr_at(250, &h) - 0.05).abs() < 1e-15);
        let flat = Hyperparams { decay: 0.0, ..h };
        assert_eq!(lr_at(10_000, &flat), 0.1);
    }

    #[test]
    fn momentum_recurrence() {
        let mut p = vec![0.0f64];
        let mut v = vec![vec![0.0f64]];
        let g = vec![vec![1.0f64]];
        sgd_momentum_step(&mut [p.as_mut_slice()], &g, &mut v, 0.1, 0.0).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-15);

        let mut p = vec![0.0f64];
        let mut v = vec![vec![0.0f64]];
        for _ in 0..2 {
            sgd_momentum_step(&mut [p.as_mut_slice()], &g, &mut v, 0.1, 0.9).unwrap();
        }
        assert!((p[0] + 0.29).abs() < 1e-12);

        let mut p = vec![1.5f64];
        let mut v = vec![vec![0.0f64]];
        sgd_momentum_step(&mut [p.as_mut_slice()], &[vec![0.0]], &mut v, 0.1, 0.9).unwrap();
        assert_eq!(p[0], 1.5);
        assert!(sgd_momentum_step(&mut [p.as_mut_slice()], &[vec![0.0, 1.0]], &mut v, 0.1, 0.9).is_err());
    }

    #[test]
    fn short_final_batch() {
        let samples = synth_dataset(15, 64, 64, 1, 2);
        let split = DatasetSplit {
            train: samples,
            validation: vec![],
            test: vec![],
        };
        let cfg: NetworkConfig = "L3F4M1.5S2".parse().unwrap();
        let h = Hyperparams { epochs: 1, ..Default::default() };
        let (_, hist) = train(Model::<f32>::build(&cfg, 1).unwrap(), &split, &h).unwrap();
        assert_eq!(hist.epochs[0].steps, 2);
    }

    #[test]
    fn mixed_resolutions_rejected() {
        let mut train_set = synth_dataset(3, 64, 64, 1, 2);
        train_set.extend(synth_dataset(1, 32, 32, 2, 2));
        let split = DatasetSplit {
            train: train_set,
            validation: vec![],
            test: vec![],
        };
        let cfg: NetworkConfig = "L3F4M1.5S2".parse().unwrap();
        let r = train(Model::<f32>::build(&cfg, 1).unwrap(), &split, &Hyperparams::default());
        assert!(matches!(r, Err(Error::Argument(_))));
    }

    #[test]
    fn divergence_reported() {
        let split = split_dataset(synth_dataset(20, 64, 64, 1, 2), DEFAULT_RATIOS, 0).unwrap();
        let cfg: NetworkConfig = "L3F4M1.5S2".parse().unwrap();
        let h = Hyperparams {
            lr0: 1e30,
            epochs: 3,
            ..Default::default()
        };
        let r = train(Model::<f32>::build(&cfg, 1).unwrap(), &split, &h);
        assert!(matches!(r, Err(Error::Divergence { epoch: 1, .. })), "{r:?}");
    }

    #[test]
    fn deterministic_single_threaded() {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let split = split_dataset(synth_dataset(20, 64, 64, 4, 2), DEFAULT_RATIOS, 0).unwrap();
        let cfg: NetworkConfig = "L3F4M1.5S2".parse().unwrap();
        let h = Hyperparams { epochs: 2, seed: 5, ..Default::default() };
        let run = || {
            pool.install(|| train(Model::<f32>::build(&cfg, 9).unwrap(), &split, &h).unwrap())
        };
        let (ma, ha) = run();
        let (mb, hb) = run();
        assert_eq!(ma, mb);
        let strip = |h: &TrainHistory| h.epochs.iter().map(|e| (e.train_loss, e.val_loss, e.val_iou)).collect::<Vec<_>>();
        assert_eq!(strip(&ha), strip(&hb));
        assert_eq!(TrainHistory::read_jsonl(&ha.to_jsonl()).unwrap(), ha);
    }
}
