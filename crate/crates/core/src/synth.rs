//! Synthetic test scenes and simulated modality changes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{GridShape, IntensityImage, LabelImage};
use crate::transform::RigidTransform;

/// Smooth random texture in `[0, 1]`: several octaves of bilinearly
/// interpolated value noise plus a few soft blobs.
#[derive(Debug, Clone)]
pub struct Scene {
    shape: GridShape,
    data: Vec<f64>,
}

impl Scene {
    pub fn generate(shape: GridShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (shape.height(), shape.width());
        let mut data = vec![0.0; shape.len()];
        let mut amp = 1.0;
        let mut cell = (h.max(w) as f64 / 4.0).max(2.0);
        while cell >= 2.0 {
            let gh = (h as f64 / cell).ceil() as usize + 2;
            let gw = (w as f64 / cell).ceil() as usize + 2;
            let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.random::<f64>()).collect();
            for r in 0..h {
                for c in 0..w {
                    let (y, x) = (r as f64 / cell, c as f64 / cell);
                    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
                    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
                    let at = |i: usize, j: usize| lattice[i * gw + j];
                    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
                    let bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
                    data[r * w + c] += amp * (top * (1.0 - fy) + bot * fy);
                }
            }
            amp *= 0.6;
            cell /= 2.0;
        }
        for _ in 0..12 {
            let (cy, cx) = (
                rng.random::<f64>() * h as f64,
                rng.random::<f64>() * w as f64,
            );
            let rad = (0.03 + 0.08 * rng.random::<f64>()) * h.min(w) as f64;
            let gain = rng.random_range(-1.0..1.0);
            for r in 0..h {
                for c in 0..w {
                    let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                    data[r * w + c] += gain * (-d2 / (2.0 * rad * rad)).exp();
                }
            }
        }
        let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(f64::MIN_POSITIVE);
        data.iter_mut().for_each(|v| *v = (*v - lo) / span);
        Self { shape, data }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    /// Bilinear sample at `(x, y)`, clamped to the border.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let (h, w) = (self.shape.height(), self.shape.width());
        let x = x.clamp(0.0, (w - 1) as f64);
        let y = y.clamp(0.0, (h - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let at = |r: usize, c: usize| self.data[r * w + c];
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
        let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// Axis-aligned crop with top-left corner `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, shape: GridShape) -> Vec<f64> {
        let w = self.shape.width();
        let mut out = Vec::with_capacity(shape.len());
        for r in 0..shape.height() {
            let start = (row + r) * w + col;
            out.extend_from_slice(&self.data[start..start + shape.width()]);
        }
        out
    }

    /// Image of `shape` whose pixel `p` shows the scene at `t(p) + offset`.
    pub fn resample(&self, t: &RigidTransform, offset: [f64; 2], shape: GridShape) -> Vec<f64> {
        let mut out = Vec::with_capacity(shape.len());
        for r in 0..shape.height() {
            for c in 0..shape.width() {
                let [x, y] = t.apply([c as f64, r as f64]);
                out.push(self.sample(x + offset[0], y + offset[1]));
            }
        }
        out
    }
}

/// Intensity transformation standing in for a second imaging modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Identity,
    GammaRemap,
    Inversion,
    ChannelMix,
}

impl Modality {
    pub fn channels(self) -> usize {
        match self {
            Modality::ChannelMix => 3,
            _ => 1,
        }
    }

    /// Maps a single-channel image in `[0, 1]` to the simulated modality.
    pub fn apply(self, values: &[f64]) -> Vec<f64> {
        match self {
            Modality::Identity => values.to_vec(),
            Modality::GammaRemap => values.iter().map(|v| v.powf(2.2)).collect(),
            Modality::Inversion => values.iter().map(|v| 1.0 - v).collect(),
            Modality::ChannelMix => values
                .iter()
                .flat_map(|&v| [v * v, 1.0 - v, 0.5 + 0.5 * (3.0 * v).sin()])
                .collect(),
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "identity" => Ok(Modality::Identity),
            "gamma-remap" => Ok(Modality::GammaRemap),
            "inversion" => Ok(Modality::Inversion),
            "channel-mix" => Ok(Modality::ChannelMix),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}

/// Replaces a fraction `rate` of pixels with uniform random intensities.
pub fn impulse_noise(values: &mut [f64], channels: usize, rate: f64, rng: &mut impl Rng) {
    for px in values.chunks_exact_mut(channels) {
        if rng.random_bool(rate) {
            px.iter_mut().for_each(|v| *v = rng.random());
        }
    }
}

/// Uniform random label image.
pub fn random_labels(shape: GridShape, k: usize, rng: &mut impl Rng) -> LabelImage {
    LabelImage::from_fn(shape, k, |_, _| rng.random_range(0..k as u32)).expect("labels below k")
}

/// Label image with spatial structure: scene intensities split into `k`
/// equal-width bins.
pub fn textured_labels(shape: GridShape, k: usize, seed: u64) -> LabelImage {
    let scene = Scene::generate(shape, seed);
    LabelImage::new(
        shape,
        k,
        scene
            .data
            .iter()
            .map(|&v| ((v * k as f64) as usize).min(k - 1) as u32)
            .collect(),
    )
    .expect("labels below k")
}

pub fn gray_image(shape: GridShape, values: Vec<f64>) -> Result<IntensityImage> {
    IntensityImage::new(shape, 1, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_is_normalized_and_deterministic() {
        let s = GridShape::new(40, 60).unwrap();
        let a = Scene::generate(s, 9);
        let b = Scene::generate(s, 9);
        assert_eq!(a.data, b.data);
        let lo = a.data.iter().copied().fold(1.0, f64::min);
        let hi = a.data.iter().copied().fold(0.0, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn identity_resample_equals_crop() {
        let scene = Scene::generate(GridShape::square(32), 1);
        let shape = GridShape::new(8, 10).unwrap();
        let crop = scene.crop(5, 7, shape);
        let res = scene.resample(&RigidTransform::identity(), [7.0, 5.0], shape);
        for (x, y) in crop.iter().zip(&res) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn modality_shapes_and_parse() {
        let v = [0.0, 0.5, 1.0];
        assert_eq!(Modality::Inversion.apply(&v), vec![1.0, 0.5, 0.0]);
        assert_eq!(Modality::ChannelMix.apply(&v).len(), 9);
        assert_eq!(
            "gamma-remap".parse::<Modality>().unwrap(),
            Modality::GammaRemap
        );
        assert!("sepia".parse::<Modality>().is_err());
    }
}
