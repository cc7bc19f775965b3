//! Portable cube and label files.
//!
//! A JSON header describes the raster; the payload is little-endian values in
//! row-major, band-innermost order. Two layouts are accepted:
//!
//! * `scene.json` + `scene.raw`: header and payload side by side (same stem);
//! * any other extension: one file holding a little-endian `u32` header
//!   length, the header bytes, then the payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HsiCube, LabelField};
use crate::error::{Error, Result};

pub const ORDER_ROW_MAJOR_BAND_INNERMOST: &str = "row-major band-innermost";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeHeader {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub dtype: String,
    pub order: String,
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub class_names: Vec<String>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn header_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Header {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn is_split_layout(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}

fn payload_path(path: &Path) -> PathBuf {
    path.with_extension("raw")
}

fn read_header_and_payload(path: &Path) -> Result<(CubeHeader, Vec<u8>)> {
    if is_split_layout(path) {
        let header: CubeHeader =
            serde_json::from_slice(&read(path)?).map_err(|e| header_error(path, e.to_string()))?;
        let payload = read(&payload_path(path))?;
        Ok((header, payload))
    } else {
        let bytes = read(path)?;
        if bytes.len() < 4 {
            return Err(header_error(path, "file shorter than the length prefix"));
        }
        let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        if bytes.len() < 4 + len {
            return Err(header_error(path, "header length exceeds file size"));
        }
        let header: CubeHeader =
            serde_json::from_slice(&bytes[4..4 + len]).map_err(|e| header_error(path, e.to_string()))?;
        Ok((header, bytes[4 + len..].to_vec()))
    }
}

fn write_header_and_payload(path: &Path, header: &CubeHeader, payload: &[u8]) -> Result<()> {
    let json = serde_json::to_vec_pretty(header)?;
    if is_split_layout(path) {
        fs::write(path, &json).map_err(|e| Error::io(path, e))?;
        let raw = payload_path(path);
        fs::write(&raw, payload).map_err(|e| Error::io(&raw, e))
    } else {
        let mut bytes = Vec::with_capacity(4 + json.len() + payload.len());
        bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&json);
        bytes.extend_from_slice(payload);
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

fn check_header(path: &Path, header: &CubeHeader, dtype: &str, width_bytes: usize, payload: &[u8]) -> Result<usize> {
    if header.dtype != dtype {
        return Err(header_error(path, format!("dtype {:?}, expected {dtype:?}", header.dtype)));
    }
    if header.order != ORDER_ROW_MAJOR_BAND_INNERMOST {
        return Err(header_error(path, format!("unsupported order {:?}", header.order)));
    }
    let count = header.height * header.width * header.bands;
    let expected = count * width_bytes;
    if payload.len() != expected {
        return Err(Error::PayloadSize {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    Ok(count)
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    let path = path.as_ref();
    let (header, payload) = read_header_and_payload(path)?;
    check_header(path, &header, "f32", 4, &payload)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    HsiCube::new(header.name, header.height, header.width, header.bands, data)
}

pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    let header = CubeHeader {
        height: cube.height(),
        width: cube.width(),
        bands: cube.bands(),
        dtype: "f32".into(),
        order: ORDER_ROW_MAJOR_BAND_INNERMOST.into(),
        name: cube.name.clone(),
        class_names: Vec::new(),
    };
    let payload: Vec<u8> = cube.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_header_and_payload(path.as_ref(), &header, &payload)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelField> {
    let path = path.as_ref();
    let (header, payload) = read_header_and_payload(path)?;
    if header.bands != 1 {
        return Err(header_error(path, "label rasters have exactly one band"));
    }
    check_header(path, &header, "u16", 2, &payload)?;
    let labels: Vec<u16> = payload
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if header.class_names.is_empty() {
        LabelField::from_raw(header.height, header.width, labels)
    } else {
        LabelField::new(header.height, header.width, labels, header.class_names)
    }
}

pub fn save_labels(labels: &LabelField, path: impl AsRef<Path>) -> Result<()> {
    let header = CubeHeader {
        height: labels.height(),
        width: labels.width(),
        bands: 1,
        dtype: "u16".into(),
        order: ORDER_ROW_MAJOR_BAND_INNERMOST.into(),
        name: String::new(),
        class_names: labels.class_names.clone(),
    };
    let payload: Vec<u8> = labels.labels().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_header_and_payload(path.as_ref(), &header, &payload)
}
