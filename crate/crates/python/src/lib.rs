//! Python bindings: cost and parameter counts, metrics, masking, synthetic
//! scenes, and inference with trained model checkpoints.

use std::path::PathBuf;

use factoformer::checkpoint::load_model;
use factoformer::data::synthetic::{class_scene, SceneConfig};
use factoformer::data::{enumerate_splits, load_cube, load_labels, save_cube, save_labels, Pixel, Sample, SplitFile};
use factoformer::encoder::{self, EncoderConfig};
use factoformer::metrics::{evaluate, ConfusionMatrix};
use factoformer::model::{Classifier, FactoFormer, JointConfig, ModelConfig};
use factoformer::pretrain::sample_mask as draw_mask;
use factoformer::rng::{stream, Purpose};
use factoformer::tokenizer::{TokenMode, Tokenization};
use ndarray::Array3;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: factoformer::Error) -> PyErr {
    match e {
        factoformer::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Parameters of the standard pre-training network for one token mode
/// (`"spectral"`, `"spatial"` or `"joint"`).
#[pyfunction]
#[pyo3(signature = (mode, patch_size, bands, group = 1, with_decoder = true))]
pub fn count_params(mode: &str, patch_size: usize, bands: usize, group: usize, with_decoder: bool) -> PyResult<usize> {
    let tokenization = match mode.parse::<TokenMode>().map_err(py_err)? {
        TokenMode::Spectral => Tokenization::Spectral { group },
        TokenMode::Spatial => Tokenization::Spatial,
        TokenMode::Joint => Tokenization::Joint { k: group },
    };
    tokenization.validate().map_err(py_err)?;
    let (n, dim) = tokenization.shape(patch_size, bands);
    let config = match tokenization {
        Tokenization::Spectral { .. } => EncoderConfig::spectral(n, dim),
        _ => EncoderConfig::spatial(n, dim),
    };
    Ok(encoder::count_params(&config, with_decoder))
}

/// Token pairs per attention layer: `(joint, factorized)`.
#[pyfunction]
pub fn attention_cost(m: u64, n: u64) -> (u64, u64) {
    encoder::attention_cost(m, n)
}

/// Multiply-adds (millions) of the weighted layers per sample: `(factorized, joint)`.
#[pyfunction]
#[pyo3(signature = (patch_size, bands, classes, k = 10))]
pub fn analytic_mflops(patch_size: usize, bands: usize, classes: usize, k: usize) -> PyResult<(f64, f64)> {
    let model = ModelConfig::standard(patch_size, bands, classes, 1).map_err(py_err)?;
    let joint = JointConfig::standard(patch_size, bands, classes, k).map_err(py_err)?;
    Ok((model.macs().dense() as f64 / 1e6, joint.macs().dense() as f64 / 1e6))
}

fn metrics_dict<'py>(py: Python<'py>, m: &factoformer::metrics::Metrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("overall_accuracy", m.overall_accuracy)?;
    d.set_item("average_accuracy", m.average_accuracy)?;
    d.set_item("kappa", m.kappa)?;
    d.set_item("per_class", m.per_class.clone())?;
    Ok(d)
}

/// OA, AA, kappa and per-class accuracy of a confusion matrix (rows are truth).
#[pyfunction]
pub fn metrics<'py>(py: Python<'py>, confusion: Vec<Vec<u64>>) -> PyResult<Bound<'py, PyDict>> {
    let cm = ConfusionMatrix::from_counts(&confusion).map_err(py_err)?;
    metrics_dict(py, &factoformer::metrics::metrics(&cm).map_err(py_err)?)
}

/// Sorted indices of the `round(ratio * n)` masked tokens.
#[pyfunction]
#[pyo3(signature = (n, ratio, seed = 0))]
pub fn sample_mask(n: usize, ratio: f64, seed: u64) -> PyResult<Vec<usize>> {
    let plan = draw_mask(n, ratio, &mut stream(seed, Purpose::Mask, 0, 0)).map_err(py_err)?;
    Ok(plan.masked().to_vec())
}

/// Writes a generated scene as `<directory>/<name>/{cube,labels,split}.json`
/// and returns the scene directory.
#[pyfunction]
#[pyo3(signature = (directory, name = "synthetic", size = 32, bands = 16, classes = 3, per_class = 10, seed = 0))]
pub fn write_synthetic_scene(
    directory: PathBuf,
    name: &str,
    size: usize,
    bands: usize,
    classes: usize,
    per_class: usize,
    seed: u64,
) -> PyResult<PathBuf> {
    if size == 0 || bands == 0 || classes == 0 {
        return Err(PyValueError::new_err("size, bands and classes must be positive"));
    }
    let scene = class_scene(&SceneConfig {
        height: size,
        width: size,
        bands,
        classes,
        seed,
        ..SceneConfig::default()
    });
    let dir = directory.join(name);
    std::fs::create_dir_all(&dir).map_err(|e| PyOSError::new_err(e.to_string()))?;
    save_cube(&scene.cube, dir.join("cube.json")).map_err(py_err)?;
    save_labels(&scene.labels, dir.join("labels.json")).map_err(py_err)?;
    SplitFile::random_per_class(&scene.labels, per_class, seed)
        .save(dir.join("split.json"))
        .map_err(py_err)?;
    Ok(dir)
}

/// A trained classifier loaded from a checkpoint.
#[pyclass(frozen)]
pub struct Model {
    inner: FactoFormer<f32>,
}

impl Model {
    fn sample(&self, patch: Vec<f32>) -> PyResult<Sample> {
        let (s, b) = (self.inner.config.patch_size, self.inner.config.bands);
        let patch = Array3::from_shape_vec((s, s, b), patch).map_err(|_| {
            PyValueError::new_err(format!("a patch needs {s}*{s}*{b} values in row-major, band-innermost order"))
        })?;
        Ok(Sample {
            patch,
            label: None,
            center: Pixel::new(0, 0),
        })
    }
}

#[pymethods]
impl Model {
    #[staticmethod]
    pub fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = load_model(&path).map_err(py_err)?;
        Ok(Model { inner })
    }

    #[getter]
    pub fn patch_size(&self) -> usize {
        self.inner.config.patch_size
    }

    #[getter]
    pub fn bands(&self) -> usize {
        self.inner.config.bands
    }

    #[getter]
    pub fn classes(&self) -> usize {
        self.inner.config.classes
    }

    #[getter]
    pub fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    /// Class scores of one flattened `S x S x B` patch.
    pub fn logits(&self, patch: Vec<f32>) -> PyResult<Vec<f32>> {
        Ok(self.inner.logits(&self.sample(patch)?).map_err(py_err)?.to_vec())
    }

    /// Predicted class id (1-based) of one flattened patch.
    pub fn predict(&self, patch: Vec<f32>) -> PyResult<u16> {
        self.inner.predict(&self.sample(patch)?).map_err(py_err)
    }

    /// Metrics and confusion matrix on the test pixels of a scene.
    #[pyo3(signature = (cube, labels, split = None))]
    pub fn evaluate<'py>(
        &self,
        py: Python<'py>,
        cube: PathBuf,
        labels: PathBuf,
        split: Option<PathBuf>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let cube = load_cube(&cube).map_err(py_err)?.normalize();
        let labels = load_labels(&labels).map_err(py_err)?;
        let spec = enumerate_splits(&labels, split.as_deref()).map_err(py_err)?;
        let (_, report) = py
            .detach(|| evaluate(&self.inner, &cube, &spec.test, &labels.class_names))
            .map_err(py_err)?;
        let d = metrics_dict(py, &report.metrics)?;
        d.set_item("confusion", report.confusion)?;
        d.set_item("total", report.total)?;
        Ok(d)
    }
}

#[pymodule]
pub fn pyfactoformer(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(count_params, m)?)?;
    m.add_function(wrap_pyfunction!(attention_cost, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_mflops, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(sample_mask, m)?)?;
    m.add_function(wrap_pyfunction!(write_synthetic_scene, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
