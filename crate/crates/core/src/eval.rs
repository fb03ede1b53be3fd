//! IoU scoring, the best-threshold sweep, and connected-component regions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Mask, Sample};
use crate::error::{Error, Result};
use crate::net::{NetworkConfig, ProbMap};
use crate::segmenter::Segmenter;
use crate::tensor::Scalar;

/// Pixel counts for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, fp, fn_ }
    }

    /// Counts of a binary prediction against a binary target (nonzero = marked).
    pub fn from_masks(pred: &Mask, target: &Mask) -> Result<Self> {
        if (pred.height, pred.width) != (target.height, target.width) {
            return Err(Error::Shape(format!(
                "prediction {}×{} vs target {}×{}",
                pred.width, pred.height, target.width, target.height
            )));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &t) in pred.data.iter().zip(&target.data) {
            match (p != 0, t != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        Ok(c)
    }

    pub fn add(&mut self, other: ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn iou(&self) -> f64 {
        iou(*self)
    }
}

/// `TP / (TP + FP + FN)`, and 1 when all three are zero.
pub fn iou(c: ConfusionCounts) -> f64 {
    let denom = c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        c.tp as f64 / denom as f64
    }
}

/// Number of grid thresholds, `θ_k = k/100` for `k = 1..=99`.
pub const SWEEP_STEPS: usize = 99;

pub fn theta_at(k: usize) -> f64 {
    k as f64 / 100.0
}

pub fn theta_grid() -> Vec<f64> {
    (1..=SWEEP_STEPS).map(theta_at).collect()
}

/// Marks pixels of batch entry `b` whose probability of `class_id` is at least `theta`.
pub fn threshold_mask<T: Scalar>(probs: &ProbMap<T>, b: usize, class_id: usize, theta: f64) -> Result<Mask> {
    if class_id >= probs.classes() {
        return Err(Error::Argument(format!(
            "class {class_id} out of range for {} classes",
            probs.classes()
        )));
    }
    if b >= probs.batch() {
        return Err(Error::Argument(format!("batch entry {b} out of range for {}", probs.batch())));
    }
    let data = probs
        .class_plane(b, class_id)
        .iter()
        .map(|&p| u8::from(p.to_f64() >= theta))
        .collect();
    Mask::from_vec(probs.height(), probs.width(), data)
}

/// Largest grid index `k` with `p >= θ_k`, or 0 when `p < θ_1`.
fn bucket(p: f64) -> usize {
    let mut k = ((p * 100.0).floor().max(0.0) as usize).min(SWEEP_STEPS);
    while k < SWEEP_STEPS && p >= theta_at(k + 1) {
        k += 1;
    }
    while k > 0 && p < theta_at(k) {
        k -= 1;
    }
    k
}

/// Accumulates per-threshold counts for one class over any number of images.
#[derive(Debug, Clone)]
pub struct SweepAccumulator {
    class_id: usize,
    positive: [u64; SWEEP_STEPS + 1],
    negative: [u64; SWEEP_STEPS + 1],
    images: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub theta: f64,
    pub iou: f64,
    pub counts: ConfusionCounts,
}

impl SweepAccumulator {
    pub fn new(class_id: usize) -> Self {
        SweepAccumulator {
            class_id,
            positive: [0; SWEEP_STEPS + 1],
            negative: [0; SWEEP_STEPS + 1],
            images: 0,
        }
    }

    /// Adds every batch entry of `probs`; `targets` holds one mask per entry.
    pub fn add<T: Scalar>(&mut self, probs: &ProbMap<T>, targets: &[&Mask]) -> Result<()> {
        if self.class_id >= probs.classes() {
            return Err(Error::Argument(format!(
                "class {} out of range for {} classes",
                self.class_id,
                probs.classes()
            )));
        }
        if targets.len() != probs.batch() {
            return Err(Error::Shape(format!("{} targets for a batch of {}", targets.len(), probs.batch())));
        }
        for (b, target) in targets.iter().enumerate() {
            if (target.height, target.width) != (probs.height(), probs.width()) {
                return Err(Error::Shape(format!(
                    "target {}×{} vs probabilities {}×{}",
                    target.width,
                    target.height,
                    probs.width(),
                    probs.height()
                )));
            }
            let plane = probs.class_plane(b, self.class_id);
            for (&p, &t) in plane.iter().zip(&target.data) {
                let k = bucket(p.to_f64());
                if t as usize == self.class_id {
                    self.positive[k] += 1;
                } else {
                    self.negative[k] += 1;
                }
            }
            self.images += 1;
        }
        Ok(())
    }

    pub fn images(&self) -> usize {
        self.images
    }

    /// Counts at grid index `k` (`1..=99`).
    pub fn counts_at(&self, k: usize) -> ConfusionCounts {
        let tp: u64 = self.positive[k..].iter().sum();
        let fp: u64 = self.negative[k..].iter().sum();
        let total: u64 = self.positive.iter().sum();
        ConfusionCounts::new(tp, fp, total - tp)
    }

    /// Maximizing threshold; the smallest θ wins ties.
    pub fn best(&self) -> Result<SweepResult> {
        if self.images == 0 {
            return Err(Error::Argument("threshold sweep over an empty set".into()));
        }
        let mut best: Option<SweepResult> = None;
        for k in 1..=SWEEP_STEPS {
            let counts = self.counts_at(k);
            let v = iou(counts);
            if best.is_none_or(|b| v > b.iou) {
                best = Some(SweepResult {
                    theta: theta_at(k),
                    iou: v,
                    counts,
                });
            }
        }
        Ok(best.expect("non-empty grid"))
    }
}

/// Best grid threshold for `class_id` over a set of probability maps and their targets.
pub fn sweep_threshold<T: Scalar>(probs: &[ProbMap<T>], targets: &[Mask], class_id: usize) -> Result<SweepResult> {
    let mut acc = SweepAccumulator::new(class_id);
    let mut rest = targets;
    for p in probs {
        if rest.len() < p.batch() {
            return Err(Error::Shape("fewer targets than probability maps".into()));
        }
        let (now, later) = rest.split_at(p.batch());
        acc.add(p, &now.iter().collect::<Vec<_>>())?;
        rest = later;
    }
    if !rest.is_empty() {
        return Err(Error::Shape("more targets than probability maps".into()));
    }
    acc.best()
}

/// A 4-connected group of equal nonzero mask values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub class_id: u8,
    /// Bounding box, inclusive-exclusive.
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub pixels: usize,
    pub centroid: (f64, f64),
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

/// Two-pass union-find labeling. Returns a label per pixel (0 = background,
/// `i + 1` = region `i`) and the regions ordered by their first pixel in row-major order.
pub fn label_components(mask: &Mask) -> (Vec<u32>, Vec<Region>) {
    let (h, w) = (mask.height, mask.width);
    let mut labels = vec![0u32; h * w];
    let mut parent: Vec<u32> = vec![0];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let v = mask.data[i];
            if v == 0 {
                continue;
            }
            let left = (x > 0 && mask.data[i - 1] == v).then(|| labels[i - 1]);
            let up = (y > 0 && mask.data[i - w] == v).then(|| labels[i - w]);
            labels[i] = match (left, up) {
                (None, None) => {
                    let l = parent.len() as u32;
                    parent.push(l);
                    l
                }
                (Some(a), None) | (None, Some(a)) => a,
                (Some(a), Some(b)) => {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    let (lo, hi) = (ra.min(rb), ra.max(rb));
                    parent[hi as usize] = lo;
                    lo
                }
            };
        }
    }
    // roots are the smallest provisional label of each set, which is the one
    // given to its first pixel, so increasing root order is first-pixel order
    let mut dense = vec![0u32; parent.len()];
    let mut next = 0u32;
    for l in 1..parent.len() as u32 {
        if find(&mut parent, l) == l {
            next += 1;
            dense[l as usize] = next;
        }
    }
    let mut regions: Vec<Region> = Vec::with_capacity(next as usize);
    let mut sums = vec![(0f64, 0f64); next as usize];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if labels[i] == 0 {
                continue;
            }
            let id = dense[find(&mut parent, labels[i]) as usize];
            labels[i] = id;
            let k = id as usize - 1;
            if k == regions.len() {
                regions.push(Region {
                    class_id: mask.data[i],
                    x0: x,
                    y0: y,
                    x1: x + 1,
                    y1: y + 1,
                    pixels: 0,
                    centroid: (0.0, 0.0),
                });
            }
            let r = &mut regions[k];
            r.x0 = r.x0.min(x);
            r.x1 = r.x1.max(x + 1);
            r.y1 = r.y1.max(y + 1);
            r.pixels += 1;
            sums[k].0 += x as f64 + 0.5;
            sums[k].1 += y as f64 + 0.5;
        }
    }
    for (r, s) in regions.iter_mut().zip(&sums) {
        r.centroid = (s.0 / r.pixels as f64, s.1 / r.pixels as f64);
    }
    (labels, regions)
}

pub fn connected_components(mask: &Mask) -> Vec<Region> {
    label_components(mask).1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub id: u8,
    pub theta_star: f64,
    pub iou: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub index: usize,
    /// IoU per scored class at that class's θ*, in the order of `EvalReport::classes`.
    pub iou: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: String,
    pub segmenter: String,
    /// Number of images θ* was selected on, and whether they were the reported images.
    pub sweep_images: usize,
    pub sweep_on_report_set: bool,
    pub classes: Vec<ClassScore>,
    pub per_image: Vec<ImageScore>,
}

impl EvalReport {
    pub fn class(&self, id: u8) -> Option<&ClassScore> {
        self.classes.iter().find(|c| c.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn predict_all(seg: &dyn Segmenter, samples: &[Sample]) -> Result<Vec<ProbMap<f32>>> {
    samples.iter().map(|s| seg.predict(&s.image)).collect()
}

/// Sweeps θ per foreground class on `samples` and reports on the same images.
pub fn evaluate(seg: &dyn Segmenter, samples: &[Sample]) -> Result<EvalReport> {
    let probs = predict_all(seg, samples)?;
    report(seg, &probs, samples, None)
}

/// Selects θ* on `sweep_set` and reports counts on `report_set`.
pub fn evaluate_with_sweep(seg: &dyn Segmenter, sweep_set: &[Sample], report_set: &[Sample]) -> Result<EvalReport> {
    let sweep_probs = predict_all(seg, sweep_set)?;
    let probs = predict_all(seg, report_set)?;
    report(seg, &probs, report_set, Some((&sweep_probs, sweep_set)))
}

fn report(
    seg: &dyn Segmenter,
    probs: &[ProbMap<f32>],
    samples: &[Sample],
    sweep: Option<(&[ProbMap<f32>], &[Sample])>,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Argument("evaluation set is empty".into()));
    }
    let (sweep_probs, sweep_samples) = sweep.unwrap_or((probs, samples));
    let targets: Vec<Mask> = samples.iter().map(|s| s.target.clone()).collect();
    let sweep_targets: Vec<Mask> = sweep_samples.iter().map(|s| s.target.clone()).collect();
    let mut classes = Vec::new();
    let mut per_image: Vec<ImageScore> = (0..samples.len())
        .map(|index| ImageScore {
            index,
            iou: Vec::new(),
        })
        .collect();
    for class in 1..seg.classes() {
        let theta = sweep_threshold(sweep_probs, &sweep_targets, class)?.theta;
        let mut total = ConfusionCounts::default();
        for (i, (p, t)) in probs.iter().zip(&targets).enumerate() {
            let pred = threshold_mask(p, 0, class, theta)?;
            let c = ConfusionCounts::from_masks(&pred, &t.binary(class as u8))?;
            per_image[i].iou.push(c.iou());
            total.add(c);
        }
        classes.push(ClassScore {
            id: class as u8,
            theta_star: theta,
            iou: total.iou(),
            tp: total.tp,
            fp: total.fp,
            fn_: total.fn_,
        });
    }
    Ok(EvalReport {
        config: seg.config_id(),
        segmenter: seg.kind().to_string(),
        sweep_images: sweep_samples.len(),
        sweep_on_report_set: sweep.is_none(),
        classes,
        per_image,
    })
}

/// One line of a results table in the layout Layers, Filters, Mult, Stride, θ*, IoU, times.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub config: NetworkConfig,
    pub theta_star: Option<f64>,
    pub iou: Option<f64>,
    pub times_ms: Vec<Option<f64>>,
}

pub fn format_table(time_headers: &[String], rows: &[TableRow]) -> String {
    let mut out = format!("{:>6} {:>7} {:>5} {:>6} {:>6} {:>6}", "Layers", "Filters", "Mult", "Stride", "θ*", "IoU");
    for h in time_headers {
        let _ = write!(out, " {h:>12}");
    }
    out.push('\n');
    let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
    for r in rows {
        let c = &r.config;
        let _ = write!(
            out,
            "{:>6} {:>7} {:>5} {:>6} {:>6} {:>6}",
            c.layers,
            c.filters,
            c.multiplier,
            c.stride,
            opt(r.theta_star, 2),
            opt(r.iou, 3)
        );
        for i in 0..time_headers.len() {
            let _ = write!(out, " {:>12}", opt(r.times_ms.get(i).copied().flatten(), 1));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    fn probmap(ball: &[f32], h: usize, w: usize) -> ProbMap<f32> {
        let mut data: Vec<f32> = ball.iter().map(|p| 1.0 - p).collect();
        data.extend_from_slice(ball);
        ProbMap::new(Tensor::from_vec(Shape::new(1, 2, h, w).unwrap(), data).unwrap())
    }

    #[test]
    fn iou_values() {
        assert_eq!(iou(ConfusionCounts::new(3, 1, 1)), 0.6);
        assert_eq!(iou(ConfusionCounts::new(0, 4, 0)), 0.0);
        assert_eq!(iou(ConfusionCounts::default()), 1.0);
    }

    #[test]
    fn threshold_basics() {
        let p = probmap(&[0.4, 0.7], 1, 2);
        assert_eq!(threshold_mask(&p, 0, 0, 0.5).unwrap().data, vec![1, 0]);
        assert_eq!(threshold_mask(&p, 0, 1, 0.71).unwrap().marked(), 0);
        assert!(threshold_mask(&p, 0, 2, 0.5).is_err());
    }

    #[test]
    fn bucket_matches_comparison() {
        for i in 0..=10_000 {
            let p = i as f64 / 10_000.0;
            let k = bucket(p);
            for j in 1..=SWEEP_STEPS {
                assert_eq!(p >= theta_at(j), j <= k, "p={p} j={j}");
            }
        }
    }

    #[test]
    fn constructed_sweep_prefers_030() {
        // positives at 0.35 and 0.31, a negative at 0.25: θ in (0.25, 0.31] is perfect
        let p = probmap(&[0.35, 0.31, 0.25], 1, 3);
        let t = Mask::from_vec(1, 3, vec![1, 1, 0]).unwrap();
        let r = sweep_threshold(&[p], &[t], 1).unwrap();
        assert_eq!(r.theta, 0.26);
        assert_eq!(r.iou, 1.0);

        let p = probmap(&[0.35, 0.30, 0.295], 1, 3);
        let t = Mask::from_vec(1, 3, vec![1, 1, 0]).unwrap();
        let r = sweep_threshold(&[p], &[t], 1).unwrap();
        assert_eq!((r.theta, r.iou), (0.30, 1.0));
    }

    #[test]
    fn empty_target_convention() {
        let p = probmap(&[0.001, 0.005], 1, 2);
        let t = Mask::new(1, 2);
        let r = sweep_threshold(&[p], &[t], 1).unwrap();
        assert_eq!((r.theta, r.iou), (0.01, 1.0));
    }

    #[test]
    fn components_basic() {
        let m = Mask::from_vec(3, 5, vec![1, 1, 0, 1, 1, 1, 1, 0, 1, 1, 0, 0, 0, 0, 0]).unwrap();
        let r = connected_components(&m);
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|r| r.pixels == 4));
        assert_eq!((r[0].x0, r[1].x0), (0, 3));
        let diag = Mask::from_vec(2, 2, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(connected_components(&diag).len(), 2);
        // a U shape merges two provisional labels
        let u = Mask::from_vec(2, 3, vec![1, 0, 1, 1, 1, 1]).unwrap();
        let r = connected_components(&u);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].pixels, 5);
        assert_eq!((r[0].x0, r[0].y0, r[0].x1, r[0].y1), (0, 0, 3, 2));
    }

    #[test]
    fn table_layout() {
        let rows = vec![TableRow {
            config: "L3F5M2S2".parse().unwrap(),
            theta_star: Some(0.07),
            iou: Some(0.738),
            times_ms: vec![Some(121.04), None],
        }];
        let t = format_table(&["640x480 ms".into(), "320x256 ms".into()], &rows);
        let line = t.lines().nth(1).unwrap();
        let cols: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cols, ["3", "5", "2", "2", "0.07", "0.738", "121.0", "-"]);
    }

    proptest::proptest! {
        #[test]
        fn threshold_monotone(vals in proptest::collection::vec(0f32..1.0, 12), a in 1usize..99, b in 1usize..99) {
            let p = probmap(&vals, 3, 4);
            let (lo, hi) = (a.min(b), a.max(b));
            let m_lo = threshold_mask(&p, 0, 1, theta_at(lo)).unwrap();
            let m_hi = threshold_mask(&p, 0, 1, theta_at(hi)).unwrap();
            for (x, y) in m_lo.data.iter().zip(&m_hi.data) {
                proptest::prop_assert!(x >= y);
            }
        }

        #[test]
        fn region_pixels_sum_to_marked(bits in proptest::collection::vec(0u8..2, 64)) {
            let m = Mask::from_vec(8, 8, bits).unwrap();
            let r = connected_components(&m);
            proptest::prop_assert_eq!(r.iter().map(|r| r.pixels).sum::<usize>(), m.marked());
            for reg in &r {
                let (cx, cy) = reg.centroid;
                proptest::prop_assert!(cx >= reg.x0 as f64 && cx <= reg.x1 as f64);
                proptest::prop_assert!(cy >= reg.y0 as f64 && cy <= reg.y1 as f64);
            }
        }

        #[test]
        fn perfect_prediction_scores_one(bits in proptest::collection::vec(0u8..2, 30)) {
            let m = Mask::from_vec(5, 6, bits).unwrap();
            proptest::prop_assert_eq!(ConfusionCounts::from_masks(&m, &m).unwrap().iou(), 1.0);
        }
    }
}
