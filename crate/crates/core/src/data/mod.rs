//! Hyperspectral scenes, label rasters, splits, and neighborhood samples.

mod cube;
mod format;
mod sample;
mod split;
pub mod synthetic;

pub use cube::{HsiCube, LabelField};
pub use format::{load_cube, load_labels, save_cube, save_labels, CubeHeader, ORDER_ROW_MAJOR_BAND_INNERMOST};
pub use sample::{extract_sample, reflect_index, Sample};
pub use split::{enumerate_splits, per_class_counts, LabeledPixel, Pixel, SplitFile, SplitSpec};

use std::path::{Path, PathBuf};

/// Environment variable naming the default data root.
pub const DATA_ROOT_ENV: &str = "FACTOFORMER_DATA";

/// Files of one scene under a data root: `<root>/<scene>/cube.json` (with
/// `cube.raw`), `labels.json` (with `labels.raw`) and `split.json`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenePaths {
    pub cube: PathBuf,
    pub labels: PathBuf,
    pub split: PathBuf,
}

impl ScenePaths {
    pub fn under(root: &Path, scene: &str) -> Self {
        let dir = root.join(scene);
        ScenePaths {
            cube: dir.join("cube.json"),
            labels: dir.join("labels.json"),
            split: dir.join("split.json"),
        }
    }

    pub fn exist(&self) -> bool {
        self.cube.exists() && self.labels.exists() && self.split.exists()
    }
}

/// The data root from [`DATA_ROOT_ENV`], if set.
pub fn data_root() -> Option<PathBuf> {
    std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from)
}
