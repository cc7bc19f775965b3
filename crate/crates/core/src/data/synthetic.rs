//! Generated scenes with known structure, for tests and demos.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{HsiCube, LabelField};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    /// Probability that a pixel carries its class label (others are 0).
    pub labeled_fraction: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 32,
            width: 32,
            bands: 16,
            classes: 3,
            noise: 0.05,
            labeled_fraction: 0.5,
            seed: 0,
        }
    }
}

pub struct SyntheticScene {
    pub cube: HsiCube,
    pub labels: LabelField,
}

fn smooth_curve<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    let freq = rng.random_range(0.5..2.0);
    let phase = rng.random_range(0.0..TAU);
    let level = rng.random_range(0.3..0.7);
    let amp = rng.random_range(0.15..0.3);
    (0..len)
        .map(|b| level + amp * (TAU * freq * b as f64 / len as f64 + phase).sin())
        .collect()
}

/// Vertical class stripes, one prototype spectrum per class, plus noise.
pub fn class_scene(cfg: &SceneConfig) -> SyntheticScene {
    let mut rng = rng::stream(cfg.seed, Purpose::Synthetic, 0, 0);
    let prototypes: Vec<Vec<f64>> = (0..cfg.classes).map(|_| smooth_curve(cfg.bands, &mut rng)).collect();
    let noise = Normal::new(0.0, cfg.noise.max(1e-12)).unwrap();
    let mut data = Vec::with_capacity(cfg.height * cfg.width * cfg.bands);
    let mut labels = Vec::with_capacity(cfg.height * cfg.width);
    for _row in 0..cfg.height {
        for col in 0..cfg.width {
            let class = (col * cfg.classes / cfg.width).min(cfg.classes - 1);
            for &v in &prototypes[class] {
                data.push((v + noise.sample(&mut rng)) as f32);
            }
            let labeled = rng.random_bool(cfg.labeled_fraction.clamp(0.0, 1.0));
            labels.push(if labeled { class as u16 + 1 } else { 0 });
        }
    }
    let cube = HsiCube::new("synthetic", cfg.height, cfg.width, cfg.bands, data).expect("consistent dims");
    let names = (1..=cfg.classes).map(|c| format!("class {c}")).collect();
    let labels = LabelField::new(cfg.height, cfg.width, labels, names).expect("labels in range");
    SyntheticScene { cube, labels }
}

/// Linear mixture of `rank` smooth endmember spectra with spatially smooth abundances.
pub fn low_rank_cube(height: usize, width: usize, bands: usize, rank: usize, seed: u64) -> HsiCube {
    let mut rng = rng::stream(seed, Purpose::Synthetic, 1, 0);
    let endmembers: Vec<Vec<f64>> = (0..rank).map(|_| smooth_curve(bands, &mut rng)).collect();
    let waves: Vec<[f64; 4]> = (0..rank)
        .map(|_| {
            [
                rng.random_range(0.5..1.5),
                rng.random_range(0.5..1.5),
                rng.random_range(0.0..TAU),
                rng.random_range(0.0..TAU),
            ]
        })
        .collect();
    let mut data = Vec::with_capacity(height * width * bands);
    for row in 0..height {
        for col in 0..width {
            let y = row as f64 / height as f64;
            let x = col as f64 / width as f64;
            let abund: Vec<f64> = waves
                .iter()
                .map(|w| 0.5 + 0.25 * (TAU * w[0] * y + w[2]).sin() + 0.25 * (TAU * w[1] * x + w[3]).sin())
                .collect();
            for b in 0..bands {
                let v: f64 = abund.iter().zip(&endmembers).map(|(a, e)| a * e[b]).sum();
                data.push(v as f32);
            }
        }
    }
    HsiCube::new("low-rank", height, width, bands, data).expect("consistent dims")
}
