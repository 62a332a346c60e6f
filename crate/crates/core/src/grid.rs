//! Raster containers shared by every stage of the pipeline.
//!
//! Storage is row-major `(row, col)`. Geometry elsewhere in the crate uses
//! continuous `(x = col, y = row)` coordinates with pixel centers on integers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extent of a rectangular 2D grid. Both sides are at least one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawShape", into = "RawShape")]
pub struct GridShape {
    height: usize,
    width: usize,
}

#[derive(Serialize, Deserialize)]
struct RawShape {
    height: usize,
    width: usize,
}

impl TryFrom<RawShape> for GridShape {
    type Error = Error;
    fn try_from(raw: RawShape) -> Result<Self> {
        GridShape::new(raw.height, raw.width)
    }
}

impl From<GridShape> for RawShape {
    fn from(s: GridShape) -> Self {
        RawShape {
            height: s.height,
            width: s.width,
        }
    }
}

impl GridShape {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidShape { height, width });
        }
        Ok(Self { height, width })
    }

    /// Square shape; panics on zero. Convenience for tests and synthetic data.
    pub fn square(side: usize) -> Self {
        Self::new(side, side).expect("side must be positive")
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    #[inline]
    pub fn contains(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    /// Geometric center in `(x, y)` coordinates.
    pub fn center(&self) -> [f64; 2] {
        [
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        ]
    }
}

impl std::fmt::Display for GridShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// Dense row-major grid of values.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    shape: GridShape,
    data: Vec<T>,
}

impl<T> Grid<T> {
    pub fn from_vec(shape: GridShape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::LengthMismatch {
                expected: shape.len(),
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: GridShape, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for r in 0..shape.height {
            for c in 0..shape.width {
                data.push(f(r, c));
            }
        }
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[self.shape.index(row, col)]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            shape: self.shape,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Clone> Grid<T> {
    pub fn filled(shape: GridShape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }
}

/// Real-valued image with `channels` values per pixel, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage {
    shape: GridShape,
    channels: usize,
    data: Vec<f64>,
}

impl IntensityImage {
    pub fn new(shape: GridShape, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument(
                "channel count must be positive".into(),
            ));
        }
        if data.len() != shape.len() * channels {
            return Err(Error::LengthMismatch {
                expected: shape.len() * channels,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            shape,
            channels,
            data,
        })
    }

    /// Single-channel image from a grid of intensities.
    pub fn from_grid(grid: &Grid<f64>) -> Result<Self> {
        Self::new(grid.shape(), 1, grid.data().to_vec())
    }

    #[inline]
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Channel vector of the pixel at flat index `i`.
    #[inline]
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }
}

/// Categorical image with labels in `0..k`.
///
/// Cells introduced by padding carry [`LabelImage::PAD`], which lies outside
/// every level set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    shape: GridShape,
    k: usize,
    labels: Vec<u32>,
}

impl LabelImage {
    pub const PAD: u32 = u32::MAX;

    pub fn new(shape: GridShape, k: usize, labels: Vec<u32>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument(
                "label count k must be positive".into(),
            ));
        }
        if labels.len() != shape.len() {
            return Err(Error::LengthMismatch {
                expected: shape.len(),
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l != Self::PAD && l as usize >= k) {
            return Err(Error::LabelOutOfRange { label: bad, k });
        }
        Ok(Self { shape, k, labels })
    }

    pub fn from_fn(shape: GridShape, k: usize, f: impl FnMut(usize, usize) -> u32) -> Result<Self> {
        Self::new(shape, k, Grid::from_fn(shape, f).into_data())
    }

    #[inline]
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[self.shape.index(row, col)]
    }

    /// Renames label `l` to `perm[l]`. `perm` must be a permutation of `0..k`.
    pub fn relabel(&self, perm: &[u32]) -> Result<Self> {
        if perm.len() != self.k {
            return Err(Error::InvalidArgument(format!(
                "permutation has {} entries, expected {}",
                perm.len(),
                self.k
            )));
        }
        let mut seen = vec![false; self.k];
        for &p in perm {
            if p as usize >= self.k || std::mem::replace(&mut seen[p as usize], true) {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
        }
        let labels = self
            .labels
            .iter()
            .map(|&l| if l == Self::PAD { l } else { perm[l as usize] })
            .collect();
        Ok(Self {
            shape: self.shape,
            k: self.k,
            labels,
        })
    }
}

/// Binary region-of-interest mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    shape: GridShape,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(shape: GridShape, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != shape.len() {
            return Err(Error::LengthMismatch {
                expected: shape.len(),
                got: bits.len(),
            });
        }
        Ok(Self { shape, bits })
    }

    pub fn full(shape: GridShape) -> Self {
        Self {
            shape,
            bits: vec![true; shape.len()],
        }
    }

    pub fn empty(shape: GridShape) -> Self {
        Self {
            shape,
            bits: vec![false; shape.len()],
        }
    }

    pub fn from_fn(shape: GridShape, f: impl FnMut(usize, usize) -> bool) -> Self {
        Self {
            shape,
            bits: Grid::from_fn(shape, f).into_data(),
        }
    }

    #[inline]
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[self.shape.index(row, col)]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn intersect(&self, other: &Mask) -> Result<Mask> {
        check_same_shape(self.shape, other.shape, "mask intersection")?;
        Ok(Mask {
            shape: self.shape,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a && b)
                .collect(),
        })
    }

    /// Replaces cells outside the mask with `T::default()`.
    pub fn apply<T: Clone + Default>(&self, grid: &Grid<T>) -> Result<Grid<T>> {
        check_same_shape(self.shape, grid.shape(), "mask application")?;
        let data = grid
            .data()
            .iter()
            .zip(&self.bits)
            .map(|(v, &b)| if b { v.clone() } else { T::default() })
            .collect();
        Grid::from_vec(self.shape, data)
    }

    pub fn to_grid(&self) -> Grid<u8> {
        Grid {
            shape: self.shape,
            data: self.bits.iter().map(|&b| b as u8).collect(),
        }
    }
}

/// Non-negative per-pixel importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMask {
    shape: GridShape,
    weights: Vec<f64>,
}

impl WeightMask {
    pub fn new(shape: GridShape, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != shape.len() {
            return Err(Error::LengthMismatch {
                expected: shape.len(),
                got: weights.len(),
            });
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight at index {i} is negative or non-finite"
            )));
        }
        Ok(Self { shape, weights })
    }

    pub fn uniform(shape: GridShape, weight: f64) -> Result<Self> {
        Self::new(shape, vec![weight; shape.len()])
    }

    pub fn from_mask(mask: &Mask) -> Self {
        Self {
            shape: mask.shape,
            weights: mask
                .bits
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    #[inline]
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.shape,
            self.weights.iter().map(|w| w * factor).collect(),
        )
    }
}

pub(crate) fn check_same_shape(a: GridShape, b: GridShape, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

/// Mask of the disc inscribed in `shape`: radius `min(h, w) / 2`, centered
/// on the grid center. A pixel is set when its center lies inside the disc.
pub fn make_circular_mask(shape: GridShape) -> Mask {
    let radius = shape.height.min(shape.width) as f64 / 2.0;
    let [cx, cy] = shape.center();
    let r2 = radius * radius;
    Mask::from_fn(shape, |r, c| {
        let dy = r as f64 - cy;
        let dx = c as f64 - cx;
        dx * dx + dy * dy <= r2
    })
}
