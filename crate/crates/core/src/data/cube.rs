use crate::error::{Error, Result};

/// An `H × W × B` reflectance volume, row-major with bands innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    pub name: String,
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f32>,
}

impl HsiCube {
    pub fn new(name: impl Into<String>, height: usize, width: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Shape(format!(
                "cube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        if data.len() != height * width * bands {
            return Err(Error::Shape(format!(
                "cube {height}x{width}x{bands} needs {} values, got {}",
                height * width * bands,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData { index });
        }
        Ok(HsiCube {
            name: name.into(),
            height,
            width,
            bands,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, band: usize) -> f32 {
        self.data[(row * self.width + col) * self.bands + band]
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.bands;
        &self.data[start..start + self.bands]
    }

    /// Per-band min-max scaling to `[0, 1]`; constant bands map to 0.
    pub fn normalize(&self) -> HsiCube {
        let mut min = vec![f64::INFINITY; self.bands];
        let mut max = vec![f64::NEG_INFINITY; self.bands];
        for px in self.data.chunks_exact(self.bands) {
            for (b, &v) in px.iter().enumerate() {
                min[b] = min[b].min(v as f64);
                max[b] = max[b].max(v as f64);
            }
        }
        let mut data = self.data.clone();
        for px in data.chunks_exact_mut(self.bands) {
            for (b, v) in px.iter_mut().enumerate() {
                let range = max[b] - min[b];
                *v = if range > 0.0 {
                    ((*v as f64 - min[b]) / range) as f32
                } else {
                    0.0
                };
            }
        }
        HsiCube { data, ..self.clone() }
    }
}

/// Per-pixel class ids: 0 is unlabeled, `1..=C` are classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelField {
    height: usize,
    width: usize,
    labels: Vec<u16>,
    pub class_names: Vec<String>,
}

impl LabelField {
    pub fn new(height: usize, width: usize, labels: Vec<u16>, class_names: Vec<String>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "label raster {height}x{width} needs {} values, got {}",
                height * width,
                labels.len()
            )));
        }
        let classes = class_names.len();
        if let Some(bad) = labels.iter().find(|&&l| l as usize > classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} exceeds class count {classes}"
            )));
        }
        Ok(LabelField {
            height,
            width,
            labels,
            class_names,
        })
    }

    /// Builds a field with generic class names `class 1..=C`, where C is the largest label.
    pub fn from_raw(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        let classes = labels.iter().copied().max().unwrap_or(0) as usize;
        let names = (1..=classes).map(|c| format!("class {c}")).collect();
        Self::new(height, width, labels, names)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    pub fn matches(&self, cube: &HsiCube) -> bool {
        self.height == cube.height() && self.width == cube.width()
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l > 0).count()
    }
}
