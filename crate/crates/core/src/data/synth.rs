//! Deterministic synthetic soccer-field scenes.
//!
//! Each scene has a textured green background, often a pale off-field backdrop
//! above the field border, white field lines, white and black distractor
//! patches, sometimes a white goalpost stripe, and exactly one white ball with
//! dark spots lying fully inside the image and below the border. The scene content
//! does not depend on the class count; the goalpost foot is only annotated when
//! `classes >= 3`.

use rand::Rng;

use crate::data::annotations::{rasterize_targets, Annotation, BALL};
use crate::data::Sample;
use crate::rng::derived;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub classes: usize,
    /// Ball radius range in pixels at 64×64, scaled with `min(H, W) / 64`.
    pub ball_radius: (f64, f64),
    pub goalpost_probability: f64,
    /// Chance of an off-field backdrop above the field border.
    pub backdrop_probability: f64,
    /// Backdrop height range as a fraction of the image height.
    pub backdrop_height: (f64, f64),
    /// Inclusive range of white field lines per scene.
    pub lines: (usize, usize),
    /// Inclusive range of distractor patches per scene.
    pub distractors: (usize, usize),
    /// Side length range of distractor patches in pixels at 64×64.
    pub distractor_size: (f64, f64),
}

impl SynthParams {
    pub fn new(count: usize, height: usize, width: usize, seed: u64, classes: usize) -> Self {
        SynthParams {
            count,
            height,
            width,
            seed,
            classes,
            ball_radius: (9.0, 13.0),
            goalpost_probability: 0.4,
            backdrop_probability: 0.6,
            backdrop_height: (0.1, 0.35),
            lines: (1, 3),
            distractors: (2, 5),
            distractor_size: (2.0, 7.0),
        }
    }
}

/// Shorthand for [`synth_generate`] with default scene parameters.
pub fn synth_dataset(n: usize, height: usize, width: usize, seed: u64, classes: usize) -> Vec<Sample> {
    synth_generate(&SynthParams::new(n, height, width, seed, classes))
}

pub fn synth_generate(p: &SynthParams) -> Vec<Sample> {
    (0..p.count).map(|i| scene(p, i as u64)).collect()
}

struct Canvas {
    h: usize,
    w: usize,
    rgb: [Vec<f32>; 3],
}

impl Canvas {
    fn put(&mut self, y: usize, x: usize, c: [f32; 3]) {
        for k in 0..3 {
            self.rgb[k][y * self.w + x] = c[k].clamp(0.0, 1.0);
        }
    }

    fn fill(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, mut color: impl FnMut(usize, usize) -> Option<[f32; 3]>) {
        let ys = (y0.floor().max(0.0) as usize)..(y1.ceil().max(0.0) as usize).min(self.h);
        let xs = (x0.floor().max(0.0) as usize)..(x1.ceil().max(0.0) as usize).min(self.w);
        for y in ys {
            for x in xs.clone() {
                if let Some(c) = color(y, x) {
                    self.put(y, x, c);
                }
            }
        }
    }
}

fn white(rng: &mut impl Rng) -> [f32; 3] {
    let v = rng.random_range(0.85..1.0f32);
    [v, v, rng.random_range(v - 0.05..v)]
}

fn dark(rng: &mut impl Rng) -> [f32; 3] {
    let v = rng.random_range(0.0..0.12f32);
    [v, v, v]
}

fn scene(p: &SynthParams, index: u64) -> Sample {
    let (h, w) = (p.height, p.width);
    let s = h.min(w) as f64 / 64.0;
    let mut rng = derived(p.seed, index);

    // coarse random brightness grid, bilinearly interpolated, plus pixel noise
    let base = [
        rng.random_range(0.10..0.30f32),
        rng.random_range(0.40..0.65f32),
        rng.random_range(0.08..0.25f32),
    ];
    const GRID: usize = 9;
    let grid: Vec<f32> = (0..GRID * GRID).map(|_| rng.random_range(-0.08..0.08f32)).collect();
    let mut canvas = Canvas {
        h,
        w,
        rgb: [vec![0.0; h * w], vec![0.0; h * w], vec![0.0; h * w]],
    };
    for y in 0..h {
        let gy = y as f32 / h as f32 * (GRID - 1) as f32;
        let (y0, fy) = (gy.floor() as usize, gy.fract());
        for x in 0..w {
            let gx = x as f32 / w as f32 * (GRID - 1) as f32;
            let (x0, fx) = (gx.floor() as usize, gx.fract());
            let g = |yy: usize, xx: usize| grid[yy.min(GRID - 1) * GRID + xx.min(GRID - 1)];
            let shade = (1.0 - fy) * ((1.0 - fx) * g(y0, x0) + fx * g(y0, x0 + 1))
                + fy * ((1.0 - fx) * g(y0 + 1, x0) + fx * g(y0 + 1, x0 + 1));
            let mut c = [0.0; 3];
            for k in 0..3 {
                c[k] = base[k] + shade + rng.random_range(-0.03..0.03f32);
            }
            canvas.put(y, x, c);
        }
    }

    // off-field backdrop: pale, weakly saturated wall panels above the field border
    let mut horizon = 0usize;
    if p.backdrop_probability > 0.0 && rng.random_bool(p.backdrop_probability) {
        horizon = (rng.random_range(p.backdrop_height.0..=p.backdrop_height.1) * h as f64).round() as usize;
        let mut x = 0.0;
        while x < w as f64 {
            let pw = rng.random_range(6.0..20.0) * s;
            let v = rng.random_range(0.5..0.95f32);
            let tint = [rng.random_range(-0.06..0.06f32), rng.random_range(-0.06..0.06f32), rng.random_range(-0.06..0.06f32)];
            let noise = &mut rng;
            canvas.fill(x, 0.0, x + pw, horizon as f64, |_, _| {
                let n = noise.random_range(-0.03..0.03f32);
                Some([v + tint[0] + n, v + tint[1] + n, v + tint[2] + n])
            });
            x += pw;
        }
    }

    // field lines: horizontal or sloped bands of constant half-width
    let lines = rng.random_range(p.lines.0..=p.lines.1);
    for _ in 0..lines {
        let half = rng.random_range(0.6..1.3) * s;
        let y_left = rng.random_range(0.0..h as f64);
        let slope = rng.random_range(-0.5..0.5);
        let color = white(&mut rng);
        canvas.fill(0.0, 0.0, w as f64, h as f64, |y, x| {
            let yc = y_left + slope * (x as f64 + 0.5);
            (y >= horizon && (y as f64 + 0.5 - yc).abs() <= half).then_some(color)
        });
    }

    // distractors: ball-colored rectangles and blobs
    let n_patches = rng.random_range(p.distractors.0..=p.distractors.1);
    for _ in 0..n_patches {
        let pw = rng.random_range(p.distractor_size.0..p.distractor_size.1) * s;
        let ph = rng.random_range(p.distractor_size.0..p.distractor_size.1) * s;
        let x0 = rng.random_range(0.0..(w as f64 - pw).max(1.0));
        let y0 = rng.random_range(0.0..(h as f64 - ph).max(1.0));
        let color = if rng.random_bool(0.7) { white(&mut rng) } else { dark(&mut rng) };
        let round = rng.random_bool(0.5);
        let (cx, cy) = (x0 + pw / 2.0, y0 + ph / 2.0);
        canvas.fill(x0, y0, x0 + pw, y0 + ph, |y, x| {
            let (u, v) = ((x as f64 + 0.5 - cx) / (pw / 2.0), (y as f64 + 0.5 - cy) / (ph / 2.0));
            (!round || u * u + v * v <= 1.0).then_some(color)
        });
    }

    let mut annotations = Vec::new();

    // goalpost: vertical stripe from the top edge down to its foot
    if rng.random_bool(p.goalpost_probability) {
        let half = rng.random_range(1.5..2.5) * s;
        let x = rng.random_range(half + 1.0..w as f64 - half - 1.0).round();
        let foot = rng.random_range(0.45 * h as f64..0.9 * h as f64).round();
        let color = white(&mut rng);
        canvas.fill(x - half, 0.0, x + half, foot, |_, _| Some(color));
        if p.classes >= 3 {
            annotations.push(Annotation::goalpost_foot(x, foot));
        }
    }

    // ball, integer box fully inside the image
    let r = (rng.random_range(p.ball_radius.0..=p.ball_radius.1) * s).round().max(1.0);
    let cx = rng.random_range(r..=w as f64 - r).round();
    let cy = rng.random_range((horizon as f64 + r).min(h as f64 - r)..=h as f64 - r).round();
    let ball = Annotation::ball(cx - r, cy - r, cx + r, cy + r);
    let ball_mask = rasterize_targets(&[ball], h, w, 2).expect("ball box lies inside the image");
    let spots: Vec<(f64, f64, f64)> = (0..rng.random_range(3..=5))
        .map(|_| {
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let d = rng.random_range(0.0..0.65) * r;
            (cx + d * a.cos(), cy + d * a.sin(), rng.random_range(0.18..0.3) * r)
        })
        .collect();
    let ball_white = white(&mut rng);
    let spot_dark = dark(&mut rng);
    let light = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    canvas.fill(cx - r, cy - r, cx + r, cy + r, |y, x| {
        if ball_mask.get(y, x) != BALL {
            return None;
        }
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        if spots.iter().any(|&(sx, sy, sr)| (px - sx).powi(2) + (py - sy).powi(2) <= sr * sr) {
            return Some(spot_dark);
        }
        let shade = 1.0 - 0.15 * (((px - cx) * light.0 + (py - cy) * light.1) / r) as f32;
        Some(ball_white.map(|v| v * shade))
    });
    annotations.push(ball);

    let mut data = Vec::with_capacity(3 * h * w);
    for plane in &canvas.rgb {
        data.extend_from_slice(plane);
    }
    let image = Tensor::from_vec(Shape::new(1, 3, h, w).expect("non-zero size"), data).expect("sized");
    // ball precedence makes the annotation order irrelevant; keep the ball last in the file
    Sample::new(image, annotations, p.classes.max(2)).expect("synthetic annotations are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GOALPOST;

    #[test]
    fn deterministic() {
        let a = synth_dataset(20, 64, 64, 11, 2);
        let b = synth_dataset(20, 64, 64, 11, 2);
        assert_eq!(a, b);
        assert_ne!(a, synth_dataset(20, 64, 64, 12, 2));
    }

    #[test]
    fn every_sample_has_a_ball_and_ball_is_rare() {
        let set = synth_dataset(200, 64, 64, 3, 2);
        let mut ball = 0;
        for s in &set {
            let n = s.target.count(BALL);
            assert!(n >= 1);
            ball += n;
            assert!(s.target.data.iter().all(|&v| v < 2));
        }
        let frac = ball as f64 / (200.0 * 64.0 * 64.0);
        assert!(frac < 0.10, "ball fraction {frac}");
    }

    #[test]
    fn class_count_changes_labels_not_images() {
        let two = synth_dataset(30, 64, 64, 5, 2);
        let three = synth_dataset(30, 64, 64, 5, 3);
        let mut posts = 0;
        for (a, b) in two.iter().zip(&three) {
            assert_eq!(a.image, b.image);
            assert_eq!(a.target.binary(BALL), b.target.binary(BALL));
            posts += usize::from(b.target.count(GOALPOST) > 0);
            assert!(b.target.data.iter().all(|&v| v < 3));
        }
        assert!(posts > 0);
        assert_eq!(three[0].relabel(2).unwrap().target, two[0].target);
    }

    #[test]
    fn scales_with_resolution() {
        let set = synth_dataset(3, 256, 320, 1, 3);
        for s in &set {
            assert_eq!((s.height(), s.width()), (256, 320));
            assert!(s.target.count(BALL) > 4 * 200);
        }
    }
}
