//! Object annotations, their CSV form, and rasterization into target masks.
//!
//! Geometry uses continuous pixel coordinates: pixel `(px, py)` covers
//! `[px, px+1) × [py, py+1)` and is labeled when its center `(px+0.5, py+0.5)`
//! lies inside the shape.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::mask::Mask;
use crate::error::{Error, Result};

pub const BACKGROUND: u8 = 0;
pub const BALL: u8 = 1;
pub const GOALPOST: u8 = 2;

/// Radius of the disk labeled around a goalpost foot point.
pub const FOOT_RADIUS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Geometry {
    /// Bounding box, inclusive-exclusive.
    Box { x0: f64, y0: f64, x1: f64, y1: f64 },
    Point { x: f64, y: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub class_id: u8,
    pub geometry: Geometry,
}

impl Annotation {
    pub fn ball(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Annotation {
            class_id: BALL,
            geometry: Geometry::Box { x0, y0, x1, y1 },
        }
    }

    pub fn goalpost_foot(x: f64, y: f64) -> Self {
        Annotation {
            class_id: GOALPOST,
            geometry: Geometry::Point { x, y },
        }
    }

    /// Mirror image across the vertical center line of a `width`-wide image.
    pub fn hflip(&self, width: usize) -> Self {
        let w = width as f64;
        let geometry = match self.geometry {
            Geometry::Box { x0, y0, x1, y1 } => Geometry::Box {
                x0: w - x1,
                y0,
                x1: w - x0,
                y1,
            },
            Geometry::Point { x, y } => Geometry::Point { x: w - x, y },
        };
        Annotation { geometry, ..*self }
    }
}

fn paint(mask: &mut Mask, class: u8, ys: std::ops::Range<usize>, xs: std::ops::Range<usize>, inside: impl Fn(f64, f64) -> bool) {
    for py in ys {
        for px in xs.clone() {
            if inside(px as f64 + 0.5, py as f64 + 0.5) {
                let v = mask.get(py, px);
                if v != BALL || class == BALL {
                    mask.set(py, px, class);
                }
            }
        }
    }
}

fn clip(lo: f64, hi: f64, len: usize) -> std::ops::Range<usize> {
    let a = lo.floor().max(0.0) as usize;
    let b = (hi.ceil().max(0.0) as usize).min(len);
    a.min(b)..b
}

/// Rasterizes annotations into a class-index mask.
///
/// Boxes become the filled axis-aligned ellipse inscribed in the box; points
/// become a filled disk of radius [`FOOT_RADIUS`]. Ball pixels are never
/// overwritten by other classes.
pub fn rasterize_targets(annotations: &[Annotation], height: usize, width: usize, classes: usize) -> Result<Mask> {
    let mut mask = Mask::new(height, width);
    for a in annotations {
        if a.class_id == BACKGROUND || a.class_id as usize >= classes {
            return Err(Error::Argument(format!(
                "annotation class {} is not a foreground class of a {classes}-class task",
                a.class_id
            )));
        }
        match a.geometry {
            Geometry::Box { x0, y0, x1, y1 } => {
                if !(x1 > x0 && y1 > y0) {
                    return Err(Error::Argument(format!("degenerate box ({x0},{y0},{x1},{y1})")));
                }
                let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
                let (ax, ay) = ((x1 - x0) / 2.0, (y1 - y0) / 2.0);
                paint(&mut mask, a.class_id, clip(y0, y1, height), clip(x0, x1, width), |px, py| {
                    let (u, v) = ((px - cx) / ax, (py - cy) / ay);
                    u * u + v * v <= 1.0
                });
            }
            Geometry::Point { x, y } => {
                if !(0.0..=width as f64).contains(&x) || !(0.0..=height as f64).contains(&y) {
                    return Err(Error::Argument(format!("point ({x},{y}) outside {width}×{height}")));
                }
                let r = FOOT_RADIUS;
                paint(&mut mask, a.class_id, clip(y - r, y + r, height), clip(x - r, x + r, width), |px, py| {
                    (px - x).powi(2) + (py - y).powi(2) <= r * r
                });
            }
        }
    }
    Ok(mask)
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    image: String,
    class: u8,
    x0: f64,
    y0: f64,
    x1: Option<f64>,
    y1: Option<f64>,
}

/// Reads `image,class,x0,y0,x1,y1` rows, grouped by image name.
/// Rows without `x1,y1` are points (goalpost feet).
pub fn read_annotations_csv(reader: impl Read) -> Result<BTreeMap<String, Vec<Annotation>>> {
    let mut out: BTreeMap<String, Vec<Annotation>> = BTreeMap::new();
    for row in csv::Reader::from_reader(reader).deserialize() {
        let row: CsvRow = row?;
        let geometry = match (row.x1, row.y1) {
            (Some(x1), Some(y1)) => Geometry::Box {
                x0: row.x0,
                y0: row.y0,
                x1,
                y1,
            },
            (None, None) => Geometry::Point { x: row.x0, y: row.y0 },
            _ => {
                return Err(Error::Argument(format!(
                    "annotation for {} has only one of x1, y1",
                    row.image
                )))
            }
        };
        out.entry(row.image).or_default().push(Annotation {
            class_id: row.class,
            geometry,
        });
    }
    Ok(out)
}

pub fn write_annotations_csv<'a>(
    writer: impl Write,
    rows: impl IntoIterator<Item = (&'a str, &'a Annotation)>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (image, a) in rows {
        let (x0, y0, x1, y1) = match a.geometry {
            Geometry::Box { x0, y0, x1, y1 } => (x0, y0, Some(x1), Some(y1)),
            Geometry::Point { x, y } => (x, y, None, None),
        };
        w.serialize(CsvRow {
            image: image.to_string(),
            class: a.class_id,
            x0,
            y0,
            x1,
            y1,
        })?;
    }
    w.flush()?;
    Ok(())
}
