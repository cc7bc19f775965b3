//! Confusion matrices, overall/average accuracy, Cohen's kappa, reports and
//! classification-map export.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{extract_sample, HsiCube, LabelField, LabeledPixel, Pixel};
use crate::error::{Error, Result};
use crate::model::Classifier;

/// Counts indexed `[true][predicted]`, both 0-based class indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
    total: u64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
            total: 0,
        }
    }

    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        let mut cm = Self::new(c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::Shape(format!("row {i} has {} entries, expected {c}", row.len())));
            }
            for (j, &n) in row.iter().enumerate() {
                cm.counts[i * c + j] = n;
                cm.total += n;
            }
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Entry for 0-based true class `t` and predicted class `p`.
    pub fn get(&self, t: usize, p: usize) -> u64 {
        self.counts[t * self.classes + p]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    /// Records one prediction; labels are 1-based.
    pub fn add(&mut self, truth: u16, predicted: u16) -> Result<()> {
        let c = self.classes;
        let (t, p) = (truth as usize, predicted as usize);
        if t == 0 || p == 0 || t > c || p > c {
            return Err(Error::Shape(format!(
                "labels ({truth}, {predicted}) outside 1..={c}"
            )));
        }
        self.counts[(t - 1) * c + (p - 1)] += 1;
        self.total += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Shape("confusion matrices differ in class count".into()));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self.total += other.total;
        Ok(())
    }

    fn row_sum(&self, t: usize) -> u64 {
        (0..self.classes).map(|p| self.get(t, p)).sum()
    }

    fn col_sum(&self, p: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, p)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub overall_accuracy: f64,
    pub average_accuracy: f64,
    pub kappa: f64,
    /// Recall per class; 0 for classes absent from the truth.
    pub per_class: Vec<f64>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    if cm.total == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    let total = cm.total as f64;
    let c = cm.classes;
    let trace: u64 = (0..c).map(|i| cm.get(i, i)).sum();
    let po = trace as f64 / total;
    let mut per_class = vec![0.0; c];
    let mut present = 0usize;
    let mut acc_sum = 0.0;
    let mut pe = 0.0;
    for i in 0..c {
        let row = cm.row_sum(i);
        if row > 0 {
            per_class[i] = cm.get(i, i) as f64 / row as f64;
            acc_sum += per_class[i];
            present += 1;
        }
        pe += row as f64 * cm.col_sum(i) as f64;
    }
    pe /= total * total;
    // All mass on one class in both truth and prediction: perfect agreement.
    let kappa = if pe >= 1.0 { 1.0 } else { (po - pe) / (1.0 - pe) };
    Ok(Metrics {
        overall_accuracy: po,
        average_accuracy: acc_sum / present as f64,
        kappa,
        per_class,
    })
}

/// Confusion matrix of `model` over `test` pixels.
pub fn confusion<M: Classifier + ?Sized>(model: &M, cube: &HsiCube, test: &[LabeledPixel]) -> Result<ConfusionMatrix> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("test set is empty".into()));
    }
    if cube.bands() != model.bands() {
        return Err(Error::Shape(format!(
            "cube has {} bands, model expects {}",
            cube.bands(),
            model.bands()
        )));
    }
    let classes = model.classes();
    test.par_chunks(256)
        .map(|chunk| {
            let mut cm = ConfusionMatrix::new(classes);
            for item in chunk {
                let sample = extract_sample(cube, item.pixel, model.patch_size())?;
                cm.add(item.label, model.predict(&sample)?)?;
            }
            Ok(cm)
        })
        .try_reduce(
            || ConfusionMatrix::new(classes),
            |mut a, b| {
                a.merge(&b)?;
                Ok(a)
            },
        )
}

/// Machine-readable evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub class_names: Vec<String>,
    pub metrics: Metrics,
    pub confusion: Vec<Vec<u64>>,
    pub total: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl Report {
    pub fn new(cm: &ConfusionMatrix, class_names: &[String]) -> Result<Self> {
        Ok(Report {
            class_names: class_names.to_vec(),
            metrics: metrics(cm)?,
            confusion: cm.rows(),
            total: cm.total(),
            seed: None,
            config_hash: None,
        })
    }

    /// Per-class accuracy and OA/AA in percent with 2 decimals, kappa with 4.
    pub fn to_text(&self) -> String {
        let width = self.class_names.iter().map(String::len).max().unwrap_or(5).max(5);
        let mut out = String::new();
        let _ = writeln!(out, "{:>3}  {:<width$}  {:>7}  {:>8}", "#", "class", "test", "acc (%)");
        for (i, acc) in self.metrics.per_class.iter().enumerate() {
            let name = self.class_names.get(i).map(String::as_str).unwrap_or("");
            let count: u64 = self.confusion[i].iter().sum();
            let _ = writeln!(out, "{:>3}  {:<width$}  {:>7}  {:>8.2}", i + 1, name, count, acc * 100.0);
        }
        let _ = writeln!(out, "total test samples: {}", self.total);
        let _ = writeln!(out, "OA (%): {:.2}", self.metrics.overall_accuracy * 100.0);
        let _ = writeln!(out, "AA (%): {:.2}", self.metrics.average_accuracy * 100.0);
        let _ = writeln!(out, "kappa:  {:.4}", self.metrics.kappa);
        out
    }
}

pub fn evaluate<M: Classifier + ?Sized>(
    model: &M,
    cube: &HsiCube,
    test: &[LabeledPixel],
    class_names: &[String],
) -> Result<(ConfusionMatrix, Report)> {
    if class_names.len() != model.classes() {
        return Err(Error::Shape(format!(
            "{} class names for a {}-class model",
            class_names.len(),
            model.classes()
        )));
    }
    let cm = confusion(model, cube, test)?;
    let report = Report::new(&cm, class_names)?;
    Ok((cm, report))
}

/// RGB colours; index 0 is the background, index `c` is class `c`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    pub colors: Vec<[u8; 3]>,
}

const BASE_COLORS: [[u8; 3]; 20] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
    [128, 128, 0],
    [255, 215, 180],
    [0, 0, 128],
];

impl Palette {
    /// Fixed palette: black background, then a table of 19 distinct colours,
    /// then a deterministic hue sweep for larger class counts.
    pub fn standard(classes: usize) -> Self {
        let colors = (0..=classes)
            .map(|i| {
                if i < BASE_COLORS.len() {
                    BASE_COLORS[i]
                } else {
                    let h = (i as u64 * 2654435761) % 360;
                    hue(h as f64)
                }
            })
            .collect();
        Palette { colors }
    }

    pub fn color(&self, label: u16) -> [u8; 3] {
        self.colors.get(label as usize).copied().unwrap_or([255, 255, 255])
    }
}

fn hue(h: f64) -> [u8; 3] {
    let x = 1.0 - ((h / 60.0) % 2.0 - 1.0).abs();
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
}

/// Row-major `H × W` class map (0 = background).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u16>,
}

impl ClassMap {
    /// Renders to binary PPM (P6) bytes.
    pub fn to_ppm(&self, palette: &Palette) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for &l in &self.labels {
            out.extend_from_slice(&palette.color(l));
        }
        out
    }
}

/// Predicts every labeled pixel (every pixel with `all_pixels`) via `predict`.
pub fn predict_map(
    labels: &LabelField,
    all_pixels: bool,
    predict: impl Fn(Pixel) -> Result<u16> + Sync,
) -> Result<ClassMap> {
    let (h, w) = (labels.height(), labels.width());
    let rows: Vec<Vec<u16>> = (0..h)
        .into_par_iter()
        .map(|r| {
            (0..w)
                .map(|c| {
                    let p = Pixel::new(r, c);
                    if all_pixels || labels.get(r, c) != 0 {
                        predict(p)
                    } else {
                        Ok(0)
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(ClassMap {
        height: h,
        width: w,
        labels: rows.concat(),
    })
}

/// Writes `<path>` as P6 and `<path>.palette.json` alongside it.
pub fn write_map(map: &ClassMap, palette: &Palette, path: &Path) -> Result<()> {
    std::fs::write(path, map.to_ppm(palette)).map_err(|e| Error::io(path, e))?;
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".palette.json");
    let sidecar = std::path::PathBuf::from(sidecar);
    let json = serde_json::to_vec_pretty(palette)?;
    std::fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))
}

/// Classification map of `model` written to `path`.
pub fn export_map<M: Classifier + ?Sized>(
    model: &M,
    cube: &HsiCube,
    labels: &LabelField,
    palette: &Palette,
    all_pixels: bool,
    path: &Path,
) -> Result<ClassMap> {
    if !labels.matches(cube) {
        return Err(Error::Shape("label raster does not match the cube".into()));
    }
    let map = predict_map(labels, all_pixels, |p| {
        model.predict(&extract_sample(cube, p, model.patch_size())?)
    })?;
    write_map(&map, palette, path)?;
    Ok(map)
}
