//! Images, annotations, target masks and dataset handling.

pub mod annotations;
pub mod mask;
pub mod pnm;
pub mod synth;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

pub use annotations::{rasterize_targets, Annotation, Geometry, BALL, GOALPOST};
pub use mask::Mask;
pub use pnm::{load_image_ppm, load_mask_pgm, save_image_ppm, save_mask_pgm};
pub use synth::{synth_generate, SynthParams};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

/// An RGB image in `[0, 1]` with its per-pixel class targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Shape `(1, 3, H, W)`.
    pub image: Tensor<f32>,
    pub target: Mask,
    /// Source annotations, kept so targets can be re-rasterized for another class count.
    pub annotations: Vec<Annotation>,
}

impl Sample {
    pub fn new(image: Tensor<f32>, annotations: Vec<Annotation>, classes: usize) -> Result<Self> {
        let s = image.shape();
        if s.batch != 1 || s.channels != 3 {
            return Err(Error::Shape(format!("sample image must be (1, 3, H, W), got {s}")));
        }
        let target = rasterize_targets(&annotations, s.height, s.width, classes)?;
        Ok(Sample {
            image,
            target,
            annotations,
        })
    }

    pub fn height(&self) -> usize {
        self.target.height
    }

    pub fn width(&self) -> usize {
        self.target.width
    }

    /// Same image with targets rasterized for `classes`, dropping annotations of higher classes.
    pub fn relabel(&self, classes: usize) -> Result<Sample> {
        let kept: Vec<_> = self
            .annotations
            .iter()
            .filter(|a| (a.class_id as usize) < classes)
            .copied()
            .collect();
        Sample::new(self.image.clone(), kept, classes)
    }

    /// Horizontally mirrored image, mask and annotations.
    pub fn hflip(&self) -> Sample {
        let mut image = self.image.clone();
        let w = self.width();
        for c in 0..3 {
            for row in image.plane_mut(0, c).chunks_exact_mut(w) {
                row.reverse();
            }
        }
        Sample {
            image,
            target: self.target.hflip(),
            annotations: self.annotations.iter().map(|a| a.hflip(w)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

impl<T> DatasetSplit<T> {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The 750/150/100 proportions of train, validation and test.
pub const DEFAULT_RATIOS: [f64; 3] = [0.75, 0.15, 0.10];

/// Seeded shuffle followed by a contiguous split. Train and validation take
/// `floor(ratio·n)` items, test takes the remainder.
pub fn split_dataset<T>(mut items: Vec<T>, ratios: [f64; 3], seed: u64) -> Result<DatasetSplit<T>> {
    if items.is_empty() {
        return Err(Error::Argument("cannot split an empty dataset".into()));
    }
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::Argument(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    let n = items.len();
    items.shuffle(&mut seeded(seed));
    let n_train = ((ratios[0] * n as f64) + 1e-9).floor() as usize;
    let n_val = (((ratios[1] * n as f64) + 1e-9).floor() as usize).min(n - n_train);
    let test = items.split_off(n_train + n_val);
    let validation = items.split_off(n_train);
    Ok(DatasetSplit {
        train: items,
        validation,
        test,
    })
}

/// Appends the horizontal mirror of every sample to each part.
pub fn augment_hflip(split: DatasetSplit<Sample>) -> DatasetSplit<Sample> {
    fn double(mut v: Vec<Sample>) -> Vec<Sample> {
        let mirrored: Vec<Sample> = v.iter().map(Sample::hflip).collect();
        v.extend(mirrored);
        v
    }
    DatasetSplit {
        train: double(split.train),
        validation: double(split.validation),
        test: double(split.test),
    }
}

/// Reads a manifest: one image path per line, relative to the manifest's directory.
/// Blank lines and `#` comments are ignored.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let file = BufReader::new(File::open(path.as_ref())?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        let line = line.trim();
        if !line.is_empty() && !line.starts_with('#') {
            out.push(line.to_string());
        }
    }
    Ok(out)
}

/// Loads every image listed in `manifest` with the annotations recorded for it in `annotations_csv`.
pub fn load_dataset(manifest: impl AsRef<Path>, annotations_csv: impl AsRef<Path>, classes: usize) -> Result<Vec<Sample>> {
    let root: PathBuf = manifest.as_ref().parent().map(Path::to_path_buf).unwrap_or_default();
    let names = read_manifest(manifest.as_ref())?;
    let mut annotations = annotations::read_annotations_csv(File::open(annotations_csv.as_ref())?)?;
    names
        .iter()
        .map(|name| {
            let image = load_image_ppm(root.join(name))?;
            let anns: Vec<Annotation> = annotations
                .remove(name)
                .unwrap_or_default()
                .into_iter()
                .filter(|a| (a.class_id as usize) < classes)
                .collect();
            Sample::new(image, anns, classes)
        })
        .collect()
}

/// Writes images (`img_NNNN.ppm`), masks (`mask_NNNN.pgm`), `annotations.csv` and `manifest.txt`.
pub fn write_dataset(samples: &[Sample], classes: usize, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let names: Vec<String> = (0..samples.len()).map(|i| format!("img_{i:04}.ppm")).collect();
    for (i, (s, name)) in samples.iter().zip(&names).enumerate() {
        save_image_ppm(&s.image, dir.join(name))?;
        save_mask_pgm(&s.target, classes, dir.join(format!("mask_{i:04}.pgm")))?;
    }
    let rows = samples
        .iter()
        .zip(&names)
        .flat_map(|(s, n)| s.annotations.iter().map(move |a| (n.as_str(), a)));
    annotations::write_annotations_csv(BufWriter::new(File::create(dir.join("annotations.csv"))?), rows)?;
    let manifest = dir.join("manifest.txt");
    std::fs::write(&manifest, names.join("\n") + "\n")?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts() {
        let s = split_dataset((0..1000).collect(), DEFAULT_RATIOS, 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (750, 150, 100));
        let s = split_dataset((0..10).collect(), DEFAULT_RATIOS, 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (7, 1, 2));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let a = split_dataset((0..100).collect::<Vec<u32>>(), DEFAULT_RATIOS, 9).unwrap();
        assert_eq!(a, split_dataset((0..100).collect(), DEFAULT_RATIOS, 9).unwrap());
        let mut all: Vec<u32> = a.train.iter().chain(&a.validation).chain(&a.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn split_errors() {
        assert!(split_dataset(Vec::<u8>::new(), DEFAULT_RATIOS, 0).is_err());
        assert!(split_dataset(vec![1, 2], [0.5, 0.6, 0.1], 0).is_err());
    }

    #[test]
    fn hflip_is_involution_and_moves_ball() {
        let samples = synth_generate(&SynthParams::new(4, 64, 64, 3, 2));
        for s in &samples {
            assert_eq!(s.hflip().hflip(), *s);
            let f = s.hflip();
            assert_eq!(f.target.count(BALL), s.target.count(BALL));
            // mirrored annotations rasterize to the mirrored mask
            assert_eq!(rasterize_targets(&f.annotations, 64, 64, 2).unwrap(), f.target);
        }
        let mut edge = Sample::new(
            Tensor::zeros(crate::tensor::Shape::new(1, 3, 16, 16).unwrap()),
            vec![Annotation::ball(0.0, 4.0, 6.0, 10.0)],
            2,
        )
        .unwrap();
        edge = edge.hflip();
        assert_eq!(edge.target.get(7, 15), BALL);
        assert_eq!(edge.target.get(7, 0), 0);
    }

    #[test]
    fn augmentation_doubles() {
        let samples = synth_generate(&SynthParams::new(20, 64, 64, 5, 2));
        let split = augment_hflip(split_dataset(samples, DEFAULT_RATIOS, 1).unwrap());
        assert_eq!((split.train.len(), split.validation.len(), split.test.len()), (30, 6, 4));
    }

    #[test]
    fn dataset_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = synth_generate(&SynthParams::new(3, 64, 64, 8, 3));
        let manifest = write_dataset(&samples, 3, dir.path()).unwrap();
        let loaded = load_dataset(&manifest, dir.path().join("annotations.csv"), 3).unwrap();
        for (a, b) in samples.iter().zip(&loaded) {
            assert_eq!(a.target, b.target);
            assert!(a.image.max_abs_diff(&b.image) <= 0.5 / 255.0 + 1e-6);
        }
        let mask = load_mask_pgm(dir.path().join("mask_0000.pgm"), 3).unwrap();
        assert_eq!(mask, samples[0].target);
    }
}
