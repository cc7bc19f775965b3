use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LabelField;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub row: usize,
    pub col: usize,
}

impl Pixel {
    pub fn new(row: usize, col: usize) -> Self {
        Pixel { row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledPixel {
    pub pixel: Pixel,
    /// Class id in `1..=C`.
    pub label: u16,
}

/// Train coordinates per class, keyed by the decimal class id.
///
/// ```json
/// { "train": { "1": [[12, 40], [13, 40]], "2": [[80, 7]] } }
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub train: BTreeMap<String, Vec<[usize; 2]>>,
}

impl SplitFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Header {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Draws up to `per_class` training pixels from each class.
    pub fn random_per_class(labels: &LabelField, per_class: usize, seed: u64) -> Self {
        let mut by_class: BTreeMap<u16, Vec<[usize; 2]>> = BTreeMap::new();
        for row in 0..labels.height() {
            for col in 0..labels.width() {
                let l = labels.get(row, col);
                if l > 0 {
                    by_class.entry(l).or_default().push([row, col]);
                }
            }
        }
        let mut rng = rng::stream(seed, Purpose::Subsample, 0, 0);
        let train = by_class
            .into_iter()
            .map(|(class, mut coords)| {
                coords.shuffle(&mut rng);
                coords.truncate(per_class);
                coords.sort();
                (class.to_string(), coords)
            })
            .collect();
        SplitFile { train }
    }
}

/// The fixed partition of a scene into fine-tuning, test and pre-training pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train: Vec<LabeledPixel>,
    pub test: Vec<LabeledPixel>,
    pub pretrain: Vec<Pixel>,
}

/// Train from `split_file` (none when absent), test = labeled minus train,
/// pretrain = every unlabeled pixel.
pub fn enumerate_splits(labels: &LabelField, split_file: Option<&Path>) -> Result<SplitSpec> {
    let file = split_file.map(SplitFile::load).transpose()?;
    SplitSpec::from_split_file(labels, file.as_ref())
}

impl SplitSpec {
    pub fn from_split_file(labels: &LabelField, file: Option<&SplitFile>) -> Result<Self> {
        let mut train = Vec::new();
        let mut seen = HashSet::new();
        if let Some(file) = file {
            for (key, coords) in &file.train {
                let class: u16 = key
                    .parse()
                    .map_err(|_| Error::Split(format!("class key {key:?} is not an integer")))?;
                for &[row, col] in coords {
                    if row >= labels.height() || col >= labels.width() {
                        return Err(Error::Split(format!("coordinate ({row}, {col}) outside the scene")));
                    }
                    let actual = labels.get(row, col);
                    if actual == 0 {
                        return Err(Error::Split(format!("coordinate ({row}, {col}) is unlabeled")));
                    }
                    if actual != class {
                        return Err(Error::Split(format!(
                            "coordinate ({row}, {col}) listed under class {class} but labeled {actual}"
                        )));
                    }
                    let pixel = Pixel::new(row, col);
                    if !seen.insert(pixel) {
                        return Err(Error::Split(format!("duplicate coordinate ({row}, {col})")));
                    }
                    train.push(LabeledPixel { pixel, label: class });
                }
            }
        }
        let mut test = Vec::new();
        let mut pretrain = Vec::new();
        for row in 0..labels.height() {
            for col in 0..labels.width() {
                let pixel = Pixel::new(row, col);
                match labels.get(row, col) {
                    0 => pretrain.push(pixel),
                    label if !seen.contains(&pixel) => test.push(LabeledPixel { pixel, label }),
                    _ => {}
                }
            }
        }
        Ok(SplitSpec { train, test, pretrain })
    }

    /// Stratified subset of the training pixels: `round(fraction · n_c)` per class, at least one.
    pub fn subsample_train(&self, fraction: f64, seed: u64) -> Result<SplitSpec> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!("fraction must be in (0, 1], got {fraction}")));
        }
        let mut by_class: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
        for (i, p) in self.train.iter().enumerate() {
            by_class.entry(p.label).or_default().push(i);
        }
        let mut rng = rng::stream(seed, Purpose::Subsample, 1, 0);
        let mut keep = Vec::new();
        for (_, mut idx) in by_class {
            let n = ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len());
            idx.shuffle(&mut rng);
            keep.extend_from_slice(&idx[..n]);
        }
        keep.sort_unstable();
        Ok(SplitSpec {
            train: keep.into_iter().map(|i| self.train[i]).collect(),
            test: self.test.clone(),
            pretrain: self.pretrain.clone(),
        })
    }
}

/// Number of pixels per class `1..=classes` (index 0 holds class 1).
pub fn per_class_counts(pixels: &[LabeledPixel], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for p in pixels {
        counts[p.label as usize - 1] += 1;
    }
    counts
}
