use ndarray::Array3;

use super::{HsiCube, Pixel};
use crate::error::{Error, Result};

/// An `S × S × B` neighborhood around one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub patch: Array3<f32>,
    pub label: Option<u16>,
    pub center: Pixel,
}

impl Sample {
    pub fn size(&self) -> usize {
        self.patch.dim().0
    }

    pub fn bands(&self) -> usize {
        self.patch.dim().2
    }
}

/// Mirror an index into `0..n` without repeating the border element
/// (`-1 → 1`, `n → n - 2`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Cuts the `size × size × B` window centered at `center`, reflect-padding at the borders.
pub fn extract_sample(cube: &HsiCube, center: Pixel, size: usize) -> Result<Sample> {
    if size % 2 == 0 {
        return Err(Error::InvalidArgument(format!("patch size must be odd, got {size}")));
    }
    let limit = 2 * cube.height().min(cube.width()) - 1;
    if size > limit {
        return Err(Error::InvalidArgument(format!(
            "patch size {size} exceeds {limit} for a {}x{} scene",
            cube.height(),
            cube.width()
        )));
    }
    if center.row >= cube.height() || center.col >= cube.width() {
        return Err(Error::InvalidArgument(format!(
            "center ({}, {}) outside {}x{} scene",
            center.row,
            center.col,
            cube.height(),
            cube.width()
        )));
    }
    let half = (size / 2) as isize;
    let bands = cube.bands();
    let mut patch = Array3::zeros((size, size, bands));
    for i in 0..size {
        let r = reflect_index(center.row as isize - half + i as isize, cube.height());
        for j in 0..size {
            let c = reflect_index(center.col as isize - half + j as isize, cube.width());
            for (b, &v) in cube.spectrum(r, c).iter().enumerate() {
                patch[[i, j, b]] = v;
            }
        }
    }
    Ok(Sample {
        patch,
        label: None,
        center,
    })
}
