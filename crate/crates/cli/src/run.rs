//! Output layout, reproducibility manifests, input loading and exit codes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use factoformer::data::{enumerate_splits, load_cube, load_labels, HsiCube, LabelField, SplitSpec};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Exit status for configuration, validation and input errors.
pub const EXIT_INVALID: u8 = 2;
/// Exit status for numerical failures during training.
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub type CliResult<T> = Result<T, Failure>;

pub fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INVALID,
        message: message.into(),
    }
}

impl From<factoformer::Error> for Failure {
    fn from(e: factoformer::Error) -> Self {
        let code = if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_INVALID };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    invalid(format!("{}: {e}", path.display()))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Hash of the effective configuration as serialized JSON, leaving out the
/// output directory, which does not affect results.
pub fn config_hash(config: &RunConfig) -> String {
    let mut c = config.clone();
    c.out = PathBuf::new();
    sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
}

/// The fixed directory layout under `--out`.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_path_buf() }
    }

    fn dir(&self, name: &str) -> CliResult<PathBuf> {
        let dir = self.root.join(name);
        fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
        Ok(dir)
    }

    pub fn checkpoint(&self, name: &str) -> CliResult<PathBuf> {
        Ok(self.dir("checkpoints")?.join(name))
    }

    pub fn log(&self, name: &str) -> CliResult<PathBuf> {
        Ok(self.dir("logs")?.join(name))
    }

    pub fn report(&self, name: &str) -> CliResult<PathBuf> {
        Ok(self.dir("reports")?.join(name))
    }

    pub fn map(&self, name: &str) -> CliResult<PathBuf> {
        Ok(self.dir("maps")?.join(name))
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_failure(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| invalid(e.to_string()))?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

/// Newline-delimited JSON records, flushed after each line.
pub struct NdjsonLog {
    out: BufWriter<File>,
    path: PathBuf,
}

impl NdjsonLog {
    pub fn create(path: &Path) -> CliResult<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        }
        let file = File::create(path).map_err(|e| io_failure(path, e))?;
        Ok(NdjsonLog {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn record<T: Serialize>(&mut self, value: &T) {
        // A failing log write must not abort training; it is reported once at the end.
        let line = serde_json::to_string(value).expect("record serializes");
        let _ = writeln!(self.out, "{line}").and_then(|_| self.out.flush());
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.out.flush().map_err(|e| io_failure(&self.path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

pub fn hash_input(path: &Path) -> CliResult<InputHash> {
    let bytes = fs::read(path).map_err(|e| io_failure(path, e))?;
    Ok(InputHash {
        path: path.to_path_buf(),
        bytes: bytes.len() as u64,
        sha256: sha256_hex(&bytes),
    })
}

/// A raster and, for the two-file layout, its `.raw` payload.
fn raster_files(path: &Path) -> Vec<PathBuf> {
    let mut files = vec![path.to_path_buf()];
    if path.extension().is_some_and(|e| e == "json") {
        files.push(path.with_extension("raw"));
    }
    files
}

/// Checkpoint manifest plus its tensor payload.
pub fn checkpoint_files(path: &Path) -> Vec<PathBuf> {
    vec![path.to_path_buf(), factoformer::checkpoint::payload_path(path)]
}

/// Everything needed to reproduce a run.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub inputs: Vec<InputHash>,
    pub config: &'a RunConfig,
}

pub fn write_manifest(layout: &Layout, command: &str, config: &RunConfig, inputs: &[PathBuf]) -> CliResult<String> {
    let hash = config_hash(config);
    let manifest = RunManifest {
        tool: "factoformer",
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        args: std::env::args().collect(),
        config_hash: hash.clone(),
        seed: config.seed,
        threads: rayon::current_num_threads(),
        inputs: inputs.iter().map(|p| hash_input(p)).collect::<CliResult<_>>()?,
        config,
    };
    write_json(&layout.log(&format!("{command}.manifest.json"))?, &manifest)?;
    Ok(hash)
}

/// A normalized scene with its split.
pub struct Scene {
    pub name: String,
    pub cube: HsiCube,
    pub labels: LabelField,
    pub split: SplitSpec,
    pub files: Vec<PathBuf>,
}

pub fn load_scene(config: &RunConfig) -> CliResult<Scene> {
    let paths = config.dataset.resolve()?;
    let cube = load_cube(&paths.cube)?;
    let labels = load_labels(&paths.labels)?;
    if !labels.matches(&cube) {
        return Err(invalid(format!(
            "label raster {}x{} does not match cube {}x{}",
            labels.height(),
            labels.width(),
            cube.height(),
            cube.width()
        )));
    }
    let split = enumerate_splits(&labels, paths.split.as_deref())?;
    let mut files = raster_files(&paths.cube);
    files.extend(raster_files(&paths.labels));
    files.extend(paths.split.clone());
    Ok(Scene {
        name: config.dataset.name.clone(),
        cube: cube.normalize(),
        labels,
        split,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn numerical_errors_map_to_their_own_code() {
        let f: Failure = factoformer::Error::NonFiniteLoss {
            epoch: 1,
            batch: 0,
            value: f64::NAN,
        }
        .into();
        assert_eq!(f.code, EXIT_NUMERICAL);
        let f: Failure = factoformer::Error::InvalidArgument("x".into()).into();
        assert_eq!(f.code, EXIT_INVALID);
    }

    #[test]
    fn config_hash_changes_with_config() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..a.clone() };
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
        let moved = RunConfig {
            out: PathBuf::from("elsewhere"),
            ..a.clone()
        };
        assert_eq!(config_hash(&a), config_hash(&moved));
    }
}
