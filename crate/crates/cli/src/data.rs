use std::path::{Path, PathBuf};

use clap::Args;
use minseg::data::synth::synth_dataset;
use minseg::data::{load_dataset, read_manifest, split_dataset, DatasetSplit, Sample, DEFAULT_RATIOS};
use minseg::{Error, Result};

/// `WIDTHxHEIGHT` → `(height, width)`.
pub fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("{s:?} is not WIDTHxHEIGHT"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    if w == 0 || h == 0 {
        return Err(format!("{s:?} has a zero dimension"));
    }
    Ok((h, w))
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Generate this many synthetic images instead of reading a manifest.
    #[arg(long, conflicts_with_all = ["manifest", "annotations"], required_unless_present = "manifest")]
    pub synth: Option<usize>,
    /// Synthetic image size, WIDTHxHEIGHT.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// Image list, one PPM path per line relative to the manifest.
    #[arg(long, requires = "annotations")]
    pub manifest: Option<PathBuf>,
    /// Annotation CSV matching the manifest.
    #[arg(long, requires = "manifest")]
    pub annotations: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = DEFAULT_RATIOS.to_vec())]
    pub ratios: Vec<f64>,
    /// Skip the horizontal-flip copies of every split.
    #[arg(long)]
    pub no_augment: bool,
}

pub struct Named {
    pub name: String,
    pub sample: Sample,
}

impl DataArgs {
    pub fn input_paths(&self) -> Vec<PathBuf> {
        self.manifest.iter().chain(&self.annotations).map(|p| absolute(p)).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "synth": self.synth,
            "size": format!("{}x{}", self.size.1, self.size.0),
            "data_seed": self.data_seed,
            "manifest": self.manifest.as_ref().map(|p| absolute(p)),
            "annotations": self.annotations.as_ref().map(|p| absolute(p)),
            "classes": self.classes,
            "split_seed": self.split_seed,
            "ratios": self.ratios,
            "augment": !self.no_augment,
        })
    }

    /// Loads, splits and (unless disabled) mirrors the dataset.
    pub fn load(&self) -> Result<DatasetSplit<Named>> {
        if self.classes < 2 {
            return Err(Error::Argument("--classes must be at least 2".into()));
        }
        let named: Vec<Named> = match (&self.synth, &self.manifest, &self.annotations) {
            (Some(n), _, _) => synth_dataset(*n, self.size.0, self.size.1, self.data_seed, self.classes)
                .into_iter()
                .enumerate()
                .map(|(i, sample)| Named {
                    name: format!("synth_{i:04}"),
                    sample,
                })
                .collect(),
            (None, Some(m), Some(a)) => {
                let names = read_manifest(m)?;
                let samples = load_dataset(m, a, self.classes)?;
                names
                    .iter()
                    .zip(samples)
                    .map(|(n, sample)| Named {
                        name: stem(Path::new(n)),
                        sample,
                    })
                    .collect()
            }
            _ => return Err(Error::Argument("give --synth N or --manifest with --annotations".into())),
        };
        let ratios: [f64; 3] = self
            .ratios
            .as_slice()
            .try_into()
            .map_err(|_| Error::Argument("--ratios takes three values".into()))?;
        let split = split_dataset(named, ratios, self.split_seed)?;
        Ok(if self.no_augment {
            split
        } else {
            DatasetSplit {
                train: mirrored(split.train),
                validation: mirrored(split.validation),
                test: mirrored(split.test),
            }
        })
    }
}

fn mirrored(mut v: Vec<Named>) -> Vec<Named> {
    let flips: Vec<Named> = v
        .iter()
        .map(|n| Named {
            name: format!("{}_flip", n.name),
            sample: n.sample.hflip(),
        })
        .collect();
    v.extend(flips);
    v
}

pub fn samples(v: Vec<Named>) -> Vec<Sample> {
    v.into_iter().map(|n| n.sample).collect()
}

pub fn unnamed(split: DatasetSplit<Named>) -> DatasetSplit<Sample> {
    DatasetSplit {
        train: samples(split.train),
        validation: samples(split.validation),
        test: samples(split.test),
    }
}

pub fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

pub fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}
