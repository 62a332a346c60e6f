//! Mini-batch k-means quantization and level-set extraction.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_same_shape, Grid, IntensityImage, LabelImage, Mask, WeightMask};

/// Mini-batch k-means hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub batch_size: usize,
    pub max_iter: usize,
}

impl KMeansParams {
    /// Setting used for timing full alignments.
    pub const ALIGNMENT: KMeansParams = KMeansParams {
        batch_size: 1000,
        max_iter: 25,
    };

    /// Setting used for success-rate experiments.
    pub const ACCURACY: KMeansParams = KMeansParams {
        batch_size: 100,
        max_iter: 100,
    };
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self::ALIGNMENT
    }
}

/// Fitted centroids in channel space. `k` may be smaller than requested when
/// the masked data has fewer distinct values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub k: usize,
    pub m: usize,
    pub seed: u64,
    pub centroids: Vec<Vec<f64>>,
}

impl KMeansModel {
    pub fn new(centroids: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let k = centroids.len();
        if k == 0 {
            return Err(Error::InvalidArgument(
                "model needs at least one centroid".into(),
            ));
        }
        let m = centroids[0].len();
        if m == 0 || centroids.iter().any(|c| c.len() != m) {
            return Err(Error::InvalidArgument(
                "centroids must share a positive dimension".into(),
            ));
        }
        if centroids.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("centroids must be finite".into()));
        }
        Ok(Self {
            k,
            m,
            seed,
            centroids,
        })
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    #[inline]
    pub fn assign(&self, v: &[f64]) -> usize {
        nearest(&self.centroids, v).0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: KMeansModel = serde_json::from_str(s)?;
        let model = Self::new(raw.centroids, raw.seed)?;
        if model.k != raw.k || model.m != raw.m {
            return Err(Error::Format("k/m disagree with centroid table".into()));
        }
        Ok(model)
    }
}

#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(c, v);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn value_key(v: &[f64]) -> Vec<u64> {
    // +0.0 and -0.0 are the same value
    v.iter().map(|x| (x + 0.0).to_bits()).collect()
}

/// Fits `k` centroids to the masked pixels of `image` with mini-batch k-means
/// seeded by k-means++.
///
/// When the masked pixels take at most `k` distinct values, the centroids are
/// exactly those values (sorted) and the model's `k` shrinks accordingly.
pub fn fit_kmeans(
    image: &IntensityImage,
    mask: &Mask,
    k: usize,
    params: KMeansParams,
    seed: u64,
) -> Result<KMeansModel> {
    check_same_shape(image.shape(), mask.shape(), "k-means input")?;
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "k must be at least 2, got {k}"
        )));
    }
    if params.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let samples: Vec<usize> = mask
        .bits()
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect();
    if samples.is_empty() {
        return Err(Error::Degenerate("mask selects no pixels".into()));
    }

    let mut distinct: HashSet<Vec<u64>> = HashSet::new();
    let mut distinct_values = Vec::new();
    for &i in &samples {
        let px = image.pixel(i);
        if distinct.insert(value_key(px)) {
            distinct_values.push(px.to_vec());
            if distinct_values.len() > k {
                break;
            }
        }
    }
    if distinct_values.len() <= k {
        distinct_values.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        return KMeansModel::new(distinct_values, seed);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(image, &samples, k, params.batch_size, &mut rng);
    let mut counts = vec![0u64; k];
    let mut batch = Vec::with_capacity(params.batch_size);
    let mut assigned = Vec::with_capacity(params.batch_size);

    for _ in 0..params.max_iter {
        batch.clear();
        batch.extend((0..params.batch_size).map(|_| samples[rng.random_range(0..samples.len())]));
        assigned.clear();
        assigned.extend(batch.iter().map(|&i| nearest(&centroids, image.pixel(i))));

        for (&i, &(c, _)) in batch.iter().zip(&assigned) {
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            for (cv, &x) in centroids[c].iter_mut().zip(image.pixel(i)) {
                *cv += eta * (x - *cv);
            }
        }

        // Centroids that have never attracted a sample move onto the batch
        // sample worst served by its centroid.
        let mut taken = vec![false; batch.len()];
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = assigned
                .iter()
                .enumerate()
                .filter(|(j, _)| !taken[*j])
                .max_by(|(ja, a), (jb, b)| a.1.total_cmp(&b.1).then(jb.cmp(ja)))
                .map(|(j, _)| j);
            if let Some(j) = far {
                taken[j] = true;
                centroids[c] = image.pixel(batch[j]).to_vec();
            }
        }
    }
    KMeansModel::new(centroids, seed)
}

fn kmeans_plus_plus(
    image: &IntensityImage,
    samples: &[usize],
    k: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let init_size = (3 * batch_size).max(10 * k).min(samples.len());
    let pool: Vec<usize> = if init_size == samples.len() {
        samples.to_vec()
    } else {
        (0..init_size)
            .map(|_| samples[rng.random_range(0..samples.len())])
            .collect()
    };

    let mut centroids = vec![image.pixel(pool[rng.random_range(0..pool.len())]).to_vec()];
    let mut d2: Vec<f64> = pool
        .iter()
        .map(|&i| dist2(&centroids[0], image.pixel(i)))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = pool.len() - 1;
            for (j, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = j;
                    break;
                }
                target -= d;
            }
            image.pixel(pool[pick]).to_vec()
        } else {
            // the pool is exhausted; fall back to the farthest masked pixel
            samples
                .iter()
                .map(|&i| (i, nearest(&centroids, image.pixel(i)).1))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| image.pixel(i).to_vec())
                .expect("samples is non-empty")
        };
        for (d, &i) in d2.iter_mut().zip(&pool) {
            *d = d.min(dist2(&next, image.pixel(i)));
        }
        centroids.push(next);
    }
    centroids
}

/// Labels every pixel with its nearest centroid.
pub fn quantize(image: &IntensityImage, model: &KMeansModel) -> Result<LabelImage> {
    if image.channels() != model.m {
        return Err(Error::ShapeMismatch(format!(
            "image has {} channels, model expects {}",
            image.channels(),
            model.m
        )));
    }
    let labels: Vec<u32> = (0..image.shape().len())
        .into_par_iter()
        .with_min_len(4096)
        .map(|i| model.assign(image.pixel(i)) as u32)
        .collect();
    LabelImage::new(image.shape(), model.k, labels)
}

/// Indicator of `labels == a` inside `mask`.
pub fn level_set(labels: &LabelImage, a: u32, mask: &Mask) -> Result<Grid<u8>> {
    check_same_shape(labels.shape(), mask.shape(), "level set")?;
    if a as usize >= labels.k() {
        return Err(Error::LabelOutOfRange {
            label: a,
            k: labels.k(),
        });
    }
    let data = labels
        .labels()
        .iter()
        .zip(mask.bits())
        .map(|(&l, &m)| (m && l == a) as u8)
        .collect();
    Grid::from_vec(labels.shape(), data)
}

/// `weights` where `labels == a`, zero elsewhere.
pub fn weighted_level_set(labels: &LabelImage, a: u32, weights: &WeightMask) -> Result<Grid<f64>> {
    check_same_shape(labels.shape(), weights.shape(), "weighted level set")?;
    if a as usize >= labels.k() {
        return Err(Error::LabelOutOfRange {
            label: a,
            k: labels.k(),
        });
    }
    let data = labels
        .labels()
        .iter()
        .zip(weights.weights())
        .map(|(&l, &w)| if l == a { w } else { 0.0 })
        .collect();
    Grid::from_vec(labels.shape(), data)
}
