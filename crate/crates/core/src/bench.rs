//! Forward-pass timing: warmup, repeated timed runs on a fixed input, statistics.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{format_table, TableRow};
use crate::net::{Model, NetworkConfig};
use crate::optimize::fold_batchnorm;
use crate::rng::seeded;
use crate::segmenter::Segmenter;
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_ITERATIONS: usize = 100;
pub const DEFAULT_WARMUP: usize = 5;

/// `(height, width)` of the two timed resolutions.
pub const VGA: (usize, usize) = (480, 640);
pub const QVGA: (usize, usize) = (256, 320);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: String,
    pub segmenter: String,
    pub height: usize,
    pub width: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub min_ms: f64,
    pub fps: f64,
    pub folded: bool,
    pub threads: usize,
}

/// Times `iterations` full forward passes (including softmax) of one fixed
/// random image after `warmup` untimed ones.
pub fn time_forward(seg: &dyn Segmenter, res: (usize, usize), iterations: usize, warmup: usize) -> Result<BenchReport> {
    Ok(time_interleaved(&[seg], res, iterations, warmup)?.remove(0))
}

/// Like [`time_forward`] for several segmenters at once, taking turns on
/// every iteration so that slow drift in machine speed (frequency scaling,
/// background load) lands on all of them alike. Use this when the
/// point is to compare them.
pub fn time_interleaved(
    segs: &[&dyn Segmenter],
    (height, width): (usize, usize),
    iterations: usize,
    warmup: usize,
) -> Result<Vec<BenchReport>> {
    if iterations == 0 {
        return Err(Error::Argument("iterations must be at least 1".into()));
    }
    let shape = Shape::new(1, 3, height, width)?;
    for seg in segs {
        seg.check_input(shape)?;
    }
    let mut rng = seeded(0x5eed);
    let data = (0..shape.len()).map(|_| rng.random::<f32>()).collect();
    let image = Tensor::from_vec(shape, data)?;
    for _ in 0..warmup {
        for seg in segs {
            std::hint::black_box(seg.predict(&image)?);
        }
    }
    let mut times = vec![Vec::with_capacity(iterations); segs.len()];
    for it in 0..iterations {
        // reverse the order every other round so no segmenter always runs
        // straight after the same neighbour
        let order: Vec<usize> = if it % 2 == 0 { (0..segs.len()).collect() } else { (0..segs.len()).rev().collect() };
        for k in order {
            let start = Instant::now();
            let out = segs[k].predict(&image)?;
            times[k].push(start.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(out);
        }
    }
    Ok(segs
        .iter()
        .zip(times)
        .map(|(seg, times)| {
            let n = times.len() as f64;
            let mean = times.iter().sum::<f64>() / n;
            let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
            let min = times.iter().copied().fold(f64::INFINITY, f64::min);
            BenchReport {
                config: seg.config_id(),
                segmenter: seg.kind().to_string(),
                height,
                width,
                iterations,
                warmup,
                mean_ms: mean,
                std_ms: std,
                min_ms: min,
                fps: 1000.0 / mean,
                folded: seg.kind() == "cnn-folded",
                threads: rayon::current_num_threads(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchGrid {
    pub reports: Vec<BenchReport>,
    /// Skipped `(config, resolution)` pairs with the reason.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub iterations: usize,
    pub warmup: usize,
    pub folded: bool,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            iterations: DEFAULT_ITERATIONS,
            warmup: DEFAULT_WARMUP,
            folded: true,
            seed: 0,
        }
    }
}

/// Times freshly initialized single-precision models of every config at every
/// resolution, in the given order. Invalid pairs are skipped with a note.
pub fn bench_grid(configs: &[NetworkConfig], resolutions: &[(usize, usize)], opts: BenchOptions) -> Result<BenchGrid> {
    let mut grid = BenchGrid {
        reports: Vec::new(),
        skipped: Vec::new(),
    };
    for cfg in configs {
        let model = Model::<f32>::build(cfg, opts.seed)?;
        let seg: Box<dyn Segmenter> = if opts.folded {
            Box::new(fold_batchnorm(&model)?)
        } else {
            Box::new(model)
        };
        for &res in resolutions {
            match time_forward(seg.as_ref(), res, opts.iterations, opts.warmup) {
                Ok(r) => grid.reports.push(r),
                Err(Error::Validation(v)) => grid.skipped.push(format!("{cfg} at {}x{}: {v}", res.1, res.0)),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(grid)
}

impl BenchGrid {
    /// One row per config with a mean-time column per resolution.
    pub fn table(&self, resolutions: &[(usize, usize)]) -> String {
        let headers: Vec<String> = resolutions.iter().map(|(h, w)| format!("{w}x{h} ms")).collect();
        let mut rows: Vec<TableRow> = Vec::new();
        for r in &self.reports {
            let Ok(config) = r.config.parse::<NetworkConfig>() else {
                continue;
            };
            let col = resolutions.iter().position(|&res| res == (r.height, r.width));
            let row = match rows.iter_mut().find(|row| row.config == config) {
                Some(row) => row,
                None => {
                    rows.push(TableRow {
                        config,
                        theta_star: None,
                        iou: None,
                        times_ms: vec![None; resolutions.len()],
                    });
                    rows.last_mut().unwrap()
                }
            };
            if let Some(c) = col {
                row.times_ms[c] = Some(r.mean_ms);
            }
        }
        let mut out = format_table(&headers, &rows);
        for s in &self.skipped {
            out.push_str(&format!("skipped: {s}\n"));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
