//! The L/F/M/S architecture family.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

pub const LAYER_VALUES: [usize; 2] = [3, 4];
pub const FILTER_VALUES: [usize; 3] = [3, 4, 5];
pub const MULTIPLIER_VALUES: [f64; 3] = [1.25, 1.5, 2.0];
pub const STRIDE_VALUES: [usize; 2] = [1, 2];

/// Number of image channels every network consumes (RGB).
pub const INPUT_CHANNELS: usize = 3;

/// One member of the architecture family, written `L{layers}F{filters}M{multiplier}S{stride}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub layers: usize,
    pub filters: usize,
    pub multiplier: f64,
    pub stride: usize,
    pub classes: usize,
}

impl NetworkConfig {
    pub fn new(layers: usize, filters: usize, multiplier: f64, stride: usize, classes: usize) -> Self {
        NetworkConfig {
            layers,
            filters,
            multiplier,
            stride,
            classes,
        }
    }

    pub fn with_classes(self, classes: usize) -> Self {
        NetworkConfig { classes, ..self }
    }

    /// Checks the value sets and the (L, S) combination rule.
    pub fn check(&self) -> Result<(), Violation> {
        let out_of_range = |field: &'static str, value: String| Violation::OutOfRange { field, value };
        if !LAYER_VALUES.contains(&self.layers) {
            return Err(out_of_range("L", self.layers.to_string()));
        }
        if !FILTER_VALUES.contains(&self.filters) {
            return Err(out_of_range("F", self.filters.to_string()));
        }
        if !MULTIPLIER_VALUES.contains(&self.multiplier) {
            return Err(out_of_range("M", self.multiplier.to_string()));
        }
        if !STRIDE_VALUES.contains(&self.stride) {
            return Err(out_of_range("S", self.stride.to_string()));
        }
        if self.classes < 2 || self.classes > u8::MAX as usize {
            return Err(out_of_range("C", self.classes.to_string()));
        }
        if self.layers == 4 && self.stride == 2 {
            return Err(Violation::InvalidLayerStride {
                layers: self.layers,
                stride: self.stride,
            });
        }
        Ok(())
    }

    /// Short identifier, e.g. `L3F5M2S2`; a `C{n}` suffix is added for more than two classes.
    pub fn id(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for NetworkConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "L{}F{}M{}S{}",
            self.layers, self.filters, self.multiplier, self.stride
        )?;
        if self.classes != 2 {
            write!(f, "C{}", self.classes)?;
        }
        Ok(())
    }
}

impl FromStr for NetworkConfig {
    type Err = Error;

    /// Parses `L3F4M1.5S2` with an optional `C3` suffix (default two classes).
    /// Only the syntax is checked here; use [`NetworkConfig::check`] for the value sets.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Argument(format!("config {s:?} does not match L<n>F<n>M<x>S<n>[C<n>]"));
        let mut fields = [None::<&str>; 5];
        let keys = ['L', 'F', 'M', 'S', 'C'];
        let mut rest = s.trim();
        let mut next_key = 0;
        while !rest.is_empty() {
            let key = rest.chars().next().unwrap().to_ascii_uppercase();
            let pos = keys[next_key..].iter().position(|&k| k == key).ok_or_else(bad)? + next_key;
            rest = &rest[1..];
            let end = rest
                .find(|c: char| c.is_ascii_alphabetic())
                .unwrap_or(rest.len());
            fields[pos] = Some(&rest[..end]);
            rest = &rest[end..];
            next_key = pos + 1;
        }
        let int = |v: Option<&str>| -> Result<usize> { v.ok_or_else(bad)?.parse().map_err(|_| bad()) };
        Ok(NetworkConfig {
            layers: int(fields[0])?,
            filters: int(fields[1])?,
            multiplier: fields[2].ok_or_else(bad)?.parse().map_err(|_| bad())?,
            stride: int(fields[3])?,
            classes: match fields[4] {
                Some(c) => c.parse().map_err(|_| bad())?,
                None => 2,
            },
        })
    }
}

/// Channel widths of the encoder stages: `F`, then each previous width times `M`, rounded half up.
pub fn feature_widths(filters: usize, multiplier: f64, layers: usize) -> Vec<usize> {
    let mut widths = Vec::with_capacity(layers);
    let mut w = filters;
    for _ in 0..layers {
        widths.push(w);
        w = (w as f64 * multiplier + 0.5).floor() as usize;
    }
    widths
}

/// Factor by which the encoder shrinks each spatial dimension: `S^L · 2^(L−1)`.
pub fn total_downsample(cfg: &NetworkConfig) -> usize {
    cfg.stride.pow(cfg.layers as u32) * 2usize.pow(cfg.layers as u32 - 1)
}

/// Checks the configuration and that an `height×width` input survives every downsampling step.
pub fn validate_config(cfg: &NetworkConfig, height: usize, width: usize) -> Result<(), Violation> {
    cfg.check()?;
    let multiple = total_downsample(cfg);
    if !height.is_multiple_of(multiple) {
        return Err(Violation::HeightNotMultiple { height, multiple });
    }
    if !width.is_multiple_of(multiple) {
        return Err(Violation::WidthNotMultiple { width, multiple });
    }
    Ok(())
}

/// Value sets to enumerate over.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigGrid {
    pub layers: Vec<usize>,
    pub filters: Vec<usize>,
    pub multipliers: Vec<f64>,
    pub strides: Vec<usize>,
}

impl ConfigGrid {
    pub fn standard() -> Self {
        ConfigGrid {
            layers: LAYER_VALUES.to_vec(),
            filters: FILTER_VALUES.to_vec(),
            multipliers: MULTIPLIER_VALUES.to_vec(),
            strides: STRIDE_VALUES.to_vec(),
        }
    }

    /// Rejects values outside the family's supported sets.
    pub fn check(&self) -> Result<(), Violation> {
        fn each<V: PartialEq + ToString>(field: &'static str, vals: &[V], allowed: &[V]) -> Result<(), Violation> {
            match vals.iter().find(|v| !allowed.contains(v)) {
                Some(v) => Err(Violation::OutOfRange {
                    field,
                    value: v.to_string(),
                }),
                None => Ok(()),
            }
        }
        each("L", &self.layers, &LAYER_VALUES)?;
        each("F", &self.filters, &FILTER_VALUES)?;
        each("M", &self.multipliers, &MULTIPLIER_VALUES)?;
        each("S", &self.strides, &STRIDE_VALUES)
    }
}

/// Cartesian product of the grid minus invalid (L, S) combinations, ordered by L, F, M, S ascending.
pub fn enumerate_configs(grid: &ConfigGrid, classes: usize) -> Vec<NetworkConfig> {
    fn sorted<V: PartialOrd + Copy>(v: &[V]) -> Vec<V> {
        let mut out: Vec<V> = Vec::new();
        for &x in v {
            if !out.contains(&x) {
                out.push(x);
            }
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out
    }
    let mut out = Vec::new();
    for &l in &sorted(&grid.layers) {
        for &f in &sorted(&grid.filters) {
            for &m in &sorted(&grid.multipliers) {
                for &s in &sorted(&grid.strides) {
                    let cfg = NetworkConfig::new(l, f, m, s, classes);
                    if cfg.check().is_ok() {
                        out.push(cfg);
                    }
                }
            }
        }
    }
    out
}
