//! Global rigid alignment by maximizing mutual information over rotations
//! and integer translations.
//!
//! Both images are quantized to label images. The reference is zero-padded
//! so that displacements with partial overlap stay inside the map. For every
//! candidate rotation the floating image is warped with nearest-neighbour
//! sampling, and the displacement with the highest MI among those whose
//! overlap reaches `γ · max N` is kept.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmif::{beats, CmifMap, ReferenceCache};
use crate::domain::Displacement;
use crate::error::{Error, Result};
use crate::grid::{check_same_shape, GridShape, IntensityImage, LabelImage, Mask};
use crate::quantize::{fit_kmeans, quantize, KMeansParams};
use crate::transform::{wrap_angle, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    /// Required overlap as a fraction of the largest overlap, in `[0, 1]`.
    pub gamma: f64,
    pub angle_count: usize,
    pub refinement_count: usize,
    /// Quantization levels per image.
    pub k: usize,
    pub seed: u64,
    pub kmeans: KMeansParams,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            angle_count: 200,
            refinement_count: 32,
            k: 16,
            seed: 0,
            kmeans: KMeansParams::ALIGNMENT,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!(
                "gamma {} outside [0, 1]",
                self.gamma
            )));
        }
        if self.angle_count == 0 {
            return Err(Error::InvalidArgument(
                "angle_count must be positive".into(),
            ));
        }
        if self.k < 2 {
            return Err(Error::InvalidArgument(format!(
                "k = {} (need at least 2)",
                self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Grid,
    Refined,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentResult {
    /// Maps floating-image coordinates into reference-image coordinates.
    pub transform: RigidTransform,
    /// MI in bits at the optimum.
    pub mi: f64,
    pub angle: f64,
    /// Net integer shift: reference pixel `x` pairs with rotated floating
    /// pixel `x + displacement`.
    pub displacement: Displacement,
    pub n_at_opt: u32,
    pub stage: Stage,
}

/// Serialized form of an alignment, with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub angle_rad: f64,
    pub translation: [f64; 2],
    pub center: [f64; 2],
    pub mi_bits: f64,
    pub displacement: [isize; 2],
    pub n: u32,
    pub stage: Stage,
    pub k: usize,
    pub gamma: f64,
    pub angle_count: usize,
    pub refinement_count: usize,
    pub seed: u64,
}

impl AlignmentResult {
    pub fn report(&self, config: &AlignmentConfig) -> AlignmentReport {
        AlignmentReport {
            angle_rad: self.angle,
            translation: self.transform.translation,
            center: self.transform.center,
            mi_bits: self.mi,
            displacement: [self.displacement.row, self.displacement.col],
            n: self.n_at_opt,
            stage: self.stage,
            k: config.k,
            gamma: config.gamma,
            angle_count: config.angle_count,
            refinement_count: config.refinement_count,
            seed: config.seed,
        }
    }
}

/// Padding per side for a reference that must admit a floating image of
/// `floating` shape at overlap fraction `gamma`.
pub fn padding(floating: GridShape, gamma: f64) -> (usize, usize) {
    // guards against products like 100 · 0.30000000000000004
    let per = |n: usize| (n as f64 * (1.0 - gamma) - 1e-9).ceil().max(0.0) as usize;
    (per(floating.height()), per(floating.width()))
}

/// Pads labels and mask symmetrically. Padded cells are outside the mask and
/// carry [`LabelImage::PAD`].
pub fn zero_pad(
    a: &LabelImage,
    ma: &Mask,
    floating: GridShape,
    gamma: f64,
) -> Result<(LabelImage, Mask)> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "gamma {gamma} outside [0, 1]"
        )));
    }
    check_same_shape(a.shape(), ma.shape(), "labels vs mask")?;
    let (pr, pc) = padding(floating, gamma);
    let s = a.shape();
    let out = GridShape::new(s.height() + 2 * pr, s.width() + 2 * pc)?;
    let inside =
        |r: usize, c: usize| r >= pr && r < pr + s.height() && c >= pc && c < pc + s.width();
    let labels = LabelImage::from_fn(out, a.k(), |r, c| {
        if inside(r, c) {
            a.get(r - pr, c - pc)
        } else {
            LabelImage::PAD
        }
    })?;
    let mask = Mask::from_fn(out, |r, c| inside(r, c) && ma.get(r - pr, c - pc));
    Ok((labels, mask))
}

/// Nearest-neighbour warp: output pixel `x` takes `B(round(T⁻¹(x)))` when
/// that source pixel exists and is in the mask.
pub fn warp_nn(
    b: &LabelImage,
    mb: &Mask,
    t: &RigidTransform,
    out_shape: GridShape,
) -> Result<(LabelImage, Mask)> {
    check_same_shape(b.shape(), mb.shape(), "labels vs mask")?;
    let inv = t.inverse();
    let src_shape = b.shape();
    let mut labels = vec![LabelImage::PAD; out_shape.len()];
    let mut bits = vec![false; out_shape.len()];
    labels
        .par_chunks_mut(out_shape.width())
        .zip(bits.par_chunks_mut(out_shape.width()))
        .enumerate()
        .for_each(|(r, (lrow, mrow))| {
            for c in 0..out_shape.width() {
                let [x, y] = inv.apply([c as f64, r as f64]);
                let (sr, sc) = (y.round(), x.round());
                if !(sr >= 0.0 && sc >= 0.0) {
                    continue;
                }
                let (sr, sc) = (sr as isize, sc as isize);
                if src_shape.contains(sr, sc) && mb.get(sr as usize, sc as usize) {
                    lrow[c] = b.get(sr as usize, sc as usize);
                    mrow[c] = true;
                }
            }
        });
    Ok((
        LabelImage::new(out_shape, b.k(), labels)?,
        Mask::new(out_shape, bits)?,
    ))
}

/// Highest-MI valid cell among those with `N ≥ γ · max N`. Ties go to the
/// larger overlap, then to the lexicographically smallest displacement.
pub fn gated_argmax<N: Copy + Into<f64>>(
    map: &CmifMap<N>,
    gamma: f64,
) -> Result<(Displacement, f64, N)> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "gamma {gamma} outside [0, 1]"
        )));
    }
    let max_n = map
        .n()
        .iter()
        .zip(map.valid())
        .filter(|(_, &v)| v)
        .map(|(&n, _)| n.into())
        .fold(0.0, f64::max);
    let threshold = gamma * max_n;
    let mut best: Option<(f64, f64, Displacement, N)> = None;
    for (i, chi) in map.domain().iter().enumerate() {
        let n = map.n()[i];
        if !map.valid()[i] || n.into() < threshold {
            continue;
        }
        let mi = map.mi()[i];
        if best.is_none_or(|(bm, bn, bc, _)| beats(mi, n.into(), chi, (bm, bn, bc))) {
            best = Some((mi, n.into(), chi, n));
        }
    }
    best.map(|(mi, _, chi, n)| (chi, mi, n))
        .ok_or(Error::NoValidCell)
}

/// `count` rotations about `center`, equispaced over `[−π, π)`.
pub fn make_angle_grid(count: usize, center: [f64; 2]) -> Vec<RigidTransform> {
    let step = 2.0 * PI / count as f64;
    (0..count)
        .map(|i| RigidTransform::rotation_about(-PI + i as f64 * step, center))
        .collect()
}

/// Mean distance between the images of the four corner pixels of `shape`
/// under the two transforms.
pub fn corner_error(t_true: &RigidTransform, t_est: &RigidTransform, shape: GridShape) -> f64 {
    let (w, h) = ((shape.width() - 1) as f64, (shape.height() - 1) as f64);
    let corners = [[0.0, 0.0], [w, 0.0], [0.0, h], [w, h]];
    corners
        .iter()
        .map(|&p| {
            let (a, b) = (t_true.apply(p), t_est.apply(p));
            (a[0] - b[0]).hypot(a[1] - b[1])
        })
        .sum::<f64>()
        / 4.0
}

/// Quantized, padded inputs reused across every candidate transform.
#[derive(Debug, Clone)]
pub struct AlignmentInputs {
    pub reference: LabelImage,
    pub reference_mask: Mask,
    pub floating: LabelImage,
    pub floating_mask: Mask,
    /// Per-side padding of the reference, `(rows, cols)`.
    pub pad: (usize, usize),
    /// Shape the floating image is warped into.
    pub target: GridShape,
    /// Offset of the floating image inside the warp target, `(rows, cols)`.
    pub embed: (usize, usize),
    pub gamma: f64,
    cache: ReferenceCache,
}

impl AlignmentInputs {
    /// Quantizes and pads. Transforms passed to the search act in the
    /// floating image's own coordinates.
    pub fn prepare(
        a: &IntensityImage,
        ma: &Mask,
        b: &IntensityImage,
        mb: &Mask,
        config: &AlignmentConfig,
    ) -> Result<Self> {
        config.validate()?;
        let model_a = fit_kmeans(a, ma, config.k, config.kmeans, config.seed)?;
        let model_b = fit_kmeans(b, mb, config.k, config.kmeans, config.seed.wrapping_add(1))?;
        if model_a.k == 1 && model_b.k == 1 {
            return Err(Error::Degenerate("no mutual information possible".into()));
        }
        Self::from_labels(
            quantize(a, &model_a)?,
            ma.clone(),
            quantize(b, &model_b)?,
            mb.clone(),
            config.gamma,
        )
    }

    pub fn from_labels(
        a: LabelImage,
        ma: Mask,
        b: LabelImage,
        mb: Mask,
        gamma: f64,
    ) -> Result<Self> {
        check_same_shape(b.shape(), mb.shape(), "labels vs mask")?;
        let (reference, reference_mask) = zero_pad(&a, &ma, b.shape(), gamma)?;
        let (ps, bs) = (reference.shape(), b.shape());
        let target = GridShape::new(ps.height().max(bs.height()), ps.width().max(bs.width()))?;
        let embed = (
            (target.height() - bs.height()) / 2,
            (target.width() - bs.width()) / 2,
        );
        Ok(Self {
            pad: padding(bs, gamma),
            cache: ReferenceCache::new(&reference, &reference_mask)?,
            reference,
            reference_mask,
            floating: b,
            floating_mask: mb,
            target,
            embed,
            gamma,
        })
    }

    /// Centre of the floating image in its own `(x, y)` coordinates.
    pub fn floating_center(&self) -> [f64; 2] {
        self.floating.shape().center()
    }

    fn embedding(&self) -> RigidTransform {
        RigidTransform::translation(self.embed.1 as f64, self.embed.0 as f64)
    }

    /// Best gated displacement for one transform, or `None` without overlap.
    pub fn evaluate(&self, t: &RigidTransform) -> Result<Option<AlignmentResult>> {
        let placed = RigidTransform::compose(&self.embedding(), t);
        let (wb, wm) = warp_nn(&self.floating, &self.floating_mask, &placed, self.target)?;
        let Some(peak) = self.cache.gated_peak(&wb, &wm, self.gamma)? else {
            return Ok(None);
        };
        let chi = peak.displacement;
        let (pr, pc) = (self.pad.0 as isize, self.pad.1 as isize);
        let (er, ec) = (self.embed.0 as isize, self.embed.1 as isize);
        let net = Displacement::new(chi.row + pr - er, chi.col + pc - ec);
        let shift = RigidTransform::from_displacement(net);
        Ok(Some(AlignmentResult {
            transform: RigidTransform::compose(&shift, t),
            mi: peak.mi,
            angle: wrap_angle(t.angle),
            displacement: net,
            n_at_opt: peak.n,
            stage: Stage::Grid,
        }))
    }

    /// Evaluates every transform; the first strictly best one wins.
    pub fn search(&self, transforms: &[RigidTransform]) -> Result<AlignmentResult> {
        if transforms.is_empty() {
            return Err(Error::InvalidArgument("empty transform set".into()));
        }
        let results = transforms
            .par_iter()
            .map(|t| self.evaluate(t))
            .collect::<Result<Vec<_>>>()?;
        let mut best: Option<AlignmentResult> = None;
        for r in results.into_iter().flatten() {
            if best.is_none_or(|b| r.mi > b.mi) {
                best = Some(r);
            }
        }
        best.ok_or(Error::NoValidCell)
    }
}

/// Alignment over the transform set `transforms`, which act in floating-image
/// coordinates.
pub fn global_align(
    a: &IntensityImage,
    ma: &Mask,
    b: &IntensityImage,
    mb: &Mask,
    transforms: &[RigidTransform],
    config: &AlignmentConfig,
) -> Result<AlignmentResult> {
    AlignmentInputs::prepare(a, ma, b, mb, config)?.search(transforms)
}

/// Random angles around the grid optimum, `±2π / grid_count`. Keeps the grid
/// result unless a sampled angle gives strictly higher MI.
pub fn refine(
    grid: &AlignmentResult,
    grid_count: usize,
    refinement_count: usize,
    seed: u64,
    inputs: &AlignmentInputs,
) -> Result<AlignmentResult> {
    if refinement_count == 0 {
        return Ok(*grid);
    }
    let half = 2.0 * PI / grid_count.max(1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = inputs.floating_center();
    let transforms: Vec<RigidTransform> = (0..refinement_count)
        .map(|_| {
            RigidTransform::rotation_about(grid.angle + rng.random_range(-half..=half), center)
        })
        .collect();
    match inputs.search(&transforms) {
        Ok(r) if r.mi > grid.mi => Ok(AlignmentResult {
            stage: Stage::Refined,
            ..r
        }),
        Ok(_) | Err(Error::NoValidCell) => Ok(*grid),
        Err(e) => Err(e),
    }
}

/// Full pipeline: quantize, pad, angle grid, then random refinement.
pub fn align(
    a: &IntensityImage,
    ma: &Mask,
    b: &IntensityImage,
    mb: &Mask,
    config: &AlignmentConfig,
) -> Result<AlignmentResult> {
    let inputs = AlignmentInputs::prepare(a, ma, b, mb, config)?;
    align_prepared(&inputs, config)
}

/// [`align`] on already quantized inputs.
pub fn align_prepared(
    inputs: &AlignmentInputs,
    config: &AlignmentConfig,
) -> Result<AlignmentResult> {
    let grid = inputs.search(&make_angle_grid(
        config.angle_count,
        inputs.floating_center(),
    ))?;
    refine(
        &grid,
        config.angle_count,
        config.refinement_count,
        config.seed,
        inputs,
    )
}
