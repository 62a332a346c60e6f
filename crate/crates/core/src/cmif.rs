//! Mutual information at every integer displacement.
//!
//! Each histogram entry, seen as a function of the displacement, is a
//! cross-correlation of two indicator grids:
//!
//! * joint count `C_ab(χ)`: level set `a` of A against level set `b` of B,
//! * marginal counts `C_a(χ)`, `C_b(χ)`: a level set against the other mask,
//! * overlap `N(χ)`: mask against mask.
//!
//! Rounded to integers these are exactly the counts a per-displacement
//! histogram would produce. Entropies follow from relative frequencies
//! `count / N` using base-2 logarithms, with `0·log 0 = 0`.
//!
//! Grids are cropped to the bounding box of their mask support before
//! transforming. Cells outside the support contribute nothing, so results
//! are unchanged while transforms shrink.

use std::borrow::Cow;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::domain::{CountMap, Displacement, DisplacementDomain};
use crate::error::{Error, Result};
use crate::grid::{check_same_shape, GridShape, LabelImage, Mask, WeightMask};
use crate::xcorr::{
    padded_extent, round_count, windowed_extent, FftPlan2d, Scratch, SpectrumCache, SpectrumRole,
    ROUNDING_HEALTH_LIMIT,
};

/// Every histogram-count family over the full displacement domain.
#[derive(Debug, Clone, PartialEq)]
pub struct CountFamilies {
    pub domain: DisplacementDomain,
    pub k_a: usize,
    pub k_b: usize,
    /// Indexed `a * k_b + b`.
    pub joint: Vec<CountMap>,
    pub marginal_a: Vec<CountMap>,
    pub marginal_b: Vec<CountMap>,
    pub overlap: CountMap,
}

impl CountFamilies {
    pub fn joint(&self, a: usize, b: usize) -> &CountMap {
        &self.joint[a * self.k_b + b]
    }
}

/// Marginal and joint entropies (bits) per displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMaps {
    pub domain: DisplacementDomain,
    pub h_a: Vec<f64>,
    pub h_b: Vec<f64>,
    pub h_ab: Vec<f64>,
    /// `N(χ) > 0`. Entropies of invalid cells are zero.
    pub valid: Vec<bool>,
}

/// Per-displacement mutual information with its overlap map.
///
/// `N` is an integer count for binary masks and a real weight sum for
/// spatially weighted MI. Invalid cells (empty overlap) hold `mi = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CmifMap<N = u32> {
    domain: DisplacementDomain,
    mi: Vec<f64>,
    n: Vec<N>,
    valid: Vec<bool>,
}

impl<N: Copy + Into<f64>> CmifMap<N> {
    pub fn new(
        domain: DisplacementDomain,
        mi: Vec<f64>,
        n: Vec<N>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        for len in [mi.len(), n.len(), valid.len()] {
            if len != domain.len() {
                return Err(Error::LengthMismatch {
                    expected: domain.len(),
                    got: len,
                });
            }
        }
        Ok(Self {
            domain,
            mi,
            n,
            valid,
        })
    }

    #[inline]
    pub fn domain(&self) -> DisplacementDomain {
        self.domain
    }

    #[inline]
    pub fn mi(&self) -> &[f64] {
        &self.mi
    }

    #[inline]
    pub fn n(&self) -> &[N] {
        &self.n
    }

    #[inline]
    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// MI at `χ`, or `None` when `χ` is outside the domain or invalid.
    pub fn mi_at(&self, chi: Displacement) -> Option<f64> {
        let i = self.domain.index(chi)?;
        self.valid[i].then(|| self.mi[i])
    }

    pub fn n_at(&self, chi: Displacement) -> Option<N> {
        self.domain.index(chi).map(|i| self.n[i])
    }

    pub fn max_n(&self) -> f64 {
        self.n.iter().map(|&v| v.into()).fold(0.0, f64::max)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Transform counts recorded during one map computation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransformStats {
    pub forward: usize,
    pub inverse: usize,
}

impl TransformStats {
    fn of(plans: &[&Arc<FftPlan2d>]) -> Self {
        let mut s = Self::default();
        for p in plans {
            s.forward += p.forward_count();
            s.inverse += p.inverse_count();
        }
        s
    }
}

/// One image cropped to the bounding box of its mask support, as level sets.
struct Side {
    shape: GridShape,
    origin: (usize, usize),
    levels: Vec<Option<Vec<f64>>>,
    mask: Vec<f64>,
}

fn support_box(
    shape: GridShape,
    inside: impl Fn(usize) -> bool,
) -> Option<(usize, usize, GridShape)> {
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..shape.height() {
        for c in 0..shape.width() {
            if inside(shape.index(r, c)) {
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
    }
    (r0 != usize::MAX).then(|| {
        (
            r0,
            c0,
            GridShape::new(r1 - r0 + 1, c1 - c0 + 1).expect("non-empty box"),
        )
    })
}

impl Side {
    fn build(labels: &LabelImage, weight: impl Fn(usize) -> f64) -> Result<Option<Side>> {
        let shape = labels.shape();
        let Some((r0, c0, crop)) = support_box(shape, |i| weight(i) > 0.0) else {
            return Ok(None);
        };
        let k = labels.k();
        let mut levels: Vec<Option<Vec<f64>>> = vec![None; k];
        let mut mask = vec![0.0; crop.len()];
        for r in 0..crop.height() {
            for c in 0..crop.width() {
                let src = shape.index(r + r0, c + c0);
                let w = weight(src);
                if w <= 0.0 {
                    continue;
                }
                let l = labels.labels()[src];
                if l == LabelImage::PAD {
                    return Err(Error::InvalidArgument(
                        "padding label inside the region of interest".into(),
                    ));
                }
                let dst = crop.index(r, c);
                mask[dst] = w;
                levels[l as usize].get_or_insert_with(|| vec![0.0; crop.len()])[dst] = w;
            }
        }
        Ok(Some(Side {
            shape: crop,
            origin: (r0, c0),
            levels,
            mask,
        }))
    }

    fn binary(labels: &LabelImage, mask: &Mask) -> Result<Option<Side>> {
        check_same_shape(labels.shape(), mask.shape(), "labels vs mask")?;
        let bits = mask.bits();
        Self::build(labels, |i| if bits[i] { 1.0 } else { 0.0 })
    }

    fn weighted(labels: &LabelImage, weights: &WeightMask) -> Result<Option<Side>> {
        check_same_shape(labels.shape(), weights.shape(), "labels vs weights")?;
        let w = weights.weights();
        Self::build(labels, |i| w[i])
    }

    fn k(&self) -> usize {
        self.levels.len()
    }
}

/// Geometry linking the cropped pair back to the uncropped displacement domain.
struct Pair {
    a: Arc<Side>,
    b: Side,
    full: DisplacementDomain,
}

impl Pair {
    /// Uncropped displacement minus cropped displacement.
    fn offset(&self) -> Displacement {
        Displacement::new(
            self.b.origin.0 as isize - self.a.origin.0 as isize,
            self.b.origin.1 as isize - self.a.origin.1 as isize,
        )
    }

    /// All displacements with possibly non-zero counts, in cropped coordinates.
    fn support(&self) -> DisplacementDomain {
        DisplacementDomain::full(self.a.shape, self.b.shape)
    }

    /// Spreads a map over cropped `window` onto the full domain.
    fn embed<T: Copy>(&self, window: &DisplacementDomain, values: &[T], fill: T) -> Vec<T> {
        let mut out = vec![fill; self.full.len()];
        let off = self.offset();
        let ew = window.extent().width();
        for (row, chunk) in values.chunks_exact(ew).enumerate() {
            let first = window.origin() + Displacement::new(row as isize, 0) + off;
            let start = self
                .full
                .index(first)
                .expect("support lies inside the full domain");
            out[start..start + ew].copy_from_slice(chunk);
        }
        out
    }
}

/// Reference spectra at one transform extent.
struct ReferenceSpectra {
    plan: Arc<FftPlan2d>,
    mask: SpectrumCache,
    levels: Option<Arc<Vec<Option<SpectrumCache>>>>,
}

impl ReferenceSpectra {
    fn new(side: &Side, extent: GridShape) -> Result<Self> {
        let plan = FftPlan2d::new(extent);
        let mask =
            SpectrumCache::from_values(side.shape, &side.mask, SpectrumRole::Reference, &plan)?;
        Ok(Self {
            plan,
            mask,
            levels: None,
        })
    }

    fn with_levels(mut self, side: &Side) -> Result<Self> {
        let levels = side
            .levels
            .par_iter()
            .map(|l| {
                l.as_ref()
                    .map(|v| {
                        SpectrumCache::from_values(
                            side.shape,
                            v,
                            SpectrumRole::Reference,
                            &self.plan,
                        )
                    })
                    .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        self.levels = Some(Arc::new(levels));
        Ok(self)
    }
}

/// Forward spectra shared by every correlation of one pair.
struct Spectra {
    plan: Arc<FftPlan2d>,
    mask_a: SpectrumCache,
    mask_b: SpectrumCache,
    /// Precomputed reference level sets; transformed on demand when absent.
    levels_a: Option<Arc<Vec<Option<SpectrumCache>>>>,
    levels_b: Vec<Option<SpectrumCache>>,
}

impl Spectra {
    fn new(pair: &Pair, extent: GridShape) -> Result<Self> {
        let reference = ReferenceSpectra::new(&pair.a, extent)?;
        Self::with_reference(pair, &reference)
    }

    fn with_reference(pair: &Pair, reference: &ReferenceSpectra) -> Result<Self> {
        let plan = reference.plan.clone();
        let mask_b =
            SpectrumCache::from_values(pair.b.shape, &pair.b.mask, SpectrumRole::Floating, &plan)?;
        let levels_b = pair
            .b
            .levels
            .par_iter()
            .map(|l| {
                l.as_ref()
                    .map(|v| {
                        SpectrumCache::from_values(pair.b.shape, v, SpectrumRole::Floating, &plan)
                    })
                    .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            plan,
            mask_a: reference.mask.clone(),
            mask_b,
            levels_a: reference.levels.clone(),
            levels_b,
        })
    }

    fn level_a(&self, pair: &Pair, a: usize) -> Result<Option<Cow<'_, SpectrumCache>>> {
        if let Some(levels) = &self.levels_a {
            return Ok(levels[a].as_ref().map(Cow::Borrowed));
        }
        pair.a.levels[a]
            .as_ref()
            .map(|v| {
                SpectrumCache::from_values(pair.a.shape, v, SpectrumRole::Reference, &self.plan)
                    .map(Cow::Owned)
            })
            .transpose()
    }
}

/// Scratch for one correlation stream.
struct Work {
    scratch: Scratch,
    raw: Vec<f64>,
}

impl Work {
    fn new(plan: &FftPlan2d, window: &DisplacementDomain) -> Self {
        Self {
            scratch: plan.scratch(),
            raw: vec![0.0; window.len()],
        }
    }

    fn correlate(
        &mut self,
        f: &SpectrumCache,
        g: &SpectrumCache,
        window: &DisplacementDomain,
    ) -> &[f64] {
        f.correlate_window(g, window, &mut self.scratch, &mut self.raw);
        &self.raw
    }
}

/// Rounds a whole correlation in one branch-free pass; the per-cell check
/// only reruns to locate a failure.
/// Returns the largest count.
fn round_into(raw: &[f64], out: &mut [u32]) -> Result<u32> {
    let mut healthy = true;
    let mut max = 0;
    for (o, &v) in out.iter_mut().zip(raw) {
        let r = (v + 0.5) as u32;
        healthy &= (v - r as f64).abs() < ROUNDING_HEALTH_LIMIT;
        max = max.max(r);
        *o = r;
    }
    if !healthy {
        for (i, &v) in raw.iter().enumerate() {
            round_count(v, i)?;
        }
    }
    Ok(max)
}

fn round_all(raw: &[f64]) -> Result<Vec<u32>> {
    raw.iter()
        .enumerate()
        .map(|(i, &v)| round_count(v, i))
        .collect()
}

/// `c·log2(c)` for every count up to `max`.
fn xlogx_table(max: u32) -> Vec<f64> {
    (0..=max as usize)
        .map(|c| {
            if c == 0 {
                0.0
            } else {
                c as f64 * (c as f64).log2()
            }
        })
        .collect()
}

/// Sums of `c·log2(c)` over the marginal and joint count families.
/// Entropy follows as `H = log2 N − S / N`.
struct EntropySums {
    s_a: Vec<f64>,
    s_b: Vec<f64>,
    s_ab: Vec<f64>,
}

/// Adds per-label partial sums in label order, so the result does not depend
/// on how many workers produced them.
fn reduce_in_order(total: &mut [f64], partial: &[f64]) {
    for (t, p) in total.iter_mut().zip(partial) {
        *t += p;
    }
}

/// Streams the joint correlations over `window`, accumulating entropy sums
/// without materializing the count maps. Every in-mask pixel belongs to
/// exactly one level set, so the marginal counts are exact row and column
/// sums of the joint counts and need no transforms of their own.
fn integer_entropy_sums(
    pair: &Pair,
    spectra: &Spectra,
    window: &DisplacementDomain,
    table: &[f64],
) -> Result<EntropySums> {
    let len = window.len();
    let lookup = |c: u32, i: usize| -> Result<f64> {
        match table.get(c as usize) {
            Some(&v) => Ok(v),
            None => Err(Error::NumericalHealth {
                residual: c as f64,
                index: i,
            }),
        }
    };
    let marg_b: Vec<Mutex<Vec<u32>>> = spectra
        .levels_b
        .iter()
        .map(|_| Mutex::new(vec![0u32; len]))
        .collect();
    let mut s_a = vec![0.0; len];
    let mut s_ab = vec![0.0; len];

    let wave = rayon::current_num_threads().max(1);
    let labels: Vec<usize> = (0..pair.a.k()).collect();
    for chunk in labels.chunks(wave) {
        let partials = chunk
            .par_iter()
            .map(|&a| -> Result<Option<(Vec<f64>, Vec<f64>)>> {
                let Some(fa) = spectra.level_a(pair, a)? else {
                    return Ok(None);
                };
                let mut work = Work::new(&spectra.plan, window);
                let mut marg_a = vec![0u32; len];
                let mut joint = vec![0.0; len];
                let mut counts = vec![0u32; len];
                for (gb, acc_b) in spectra.levels_b.iter().zip(&marg_b) {
                    let Some(gb) = gb else { continue };
                    let max = round_into(work.correlate(&fa, gb, window), &mut counts)?;
                    if max as usize >= table.len() {
                        let i = counts.iter().position(|&c| c == max).unwrap_or(0);
                        lookup(max, i)?;
                    }
                    for ((m, j), &c) in marg_a.iter_mut().zip(joint.iter_mut()).zip(&counts) {
                        *m += c;
                        *j += table[c as usize];
                    }
                    let mut acc_b = acc_b.lock().expect("marginal accumulator");
                    acc_b.iter_mut().zip(&counts).for_each(|(m, &c)| *m += c);
                }
                let marg = marg_a
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| lookup(c, i))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(Some((marg, joint)))
            })
            .collect::<Result<Vec<_>>>()?;
        for (marg, joint) in partials.into_iter().flatten() {
            reduce_in_order(&mut s_a, &marg);
            reduce_in_order(&mut s_ab, &joint);
        }
    }

    let mut s_b = vec![0.0; len];
    for (gb, acc) in spectra.levels_b.iter().zip(marg_b) {
        if gb.is_none() {
            continue;
        }
        let acc = acc.into_inner().expect("marginal accumulator");
        for (i, (s, &c)) in s_b.iter_mut().zip(&acc).enumerate() {
            *s += lookup(c, i)?;
        }
    }
    Ok(EntropySums { s_a, s_b, s_ab })
}

/// Entropies `(H_A, H_B, H_AB)` of one cell from its count sums.
#[inline]
fn entropies(n: f64, s_a: f64, s_b: f64, s_ab: f64) -> (f64, f64, f64) {
    let l = n.log2();
    (l - s_a / n, l - s_b / n, l - s_ab / n)
}

#[inline]
fn mutual_information(n: f64, s_a: f64, s_b: f64, s_ab: f64) -> f64 {
    let (ha, hb, hab) = entropies(n, s_a, s_b, s_ab);
    ha + hb - hab
}

fn prepare(a: &LabelImage, ma: &Mask, b: &LabelImage, mb: &Mask) -> Result<Option<Pair>> {
    let full = DisplacementDomain::full(a.shape(), b.shape());
    let (Some(sa), Some(sb)) = (Side::binary(a, ma)?, Side::binary(b, mb)?) else {
        return Ok(None);
    };
    Ok(Some(Pair {
        a: Arc::new(sa),
        b: sb,
        full,
    }))
}

fn empty_map(full: DisplacementDomain) -> CmifMap<u32> {
    CmifMap {
        domain: full,
        mi: vec![0.0; full.len()],
        n: vec![0; full.len()],
        valid: vec![false; full.len()],
    }
}

/// Overlap count `N(χ)`: number of positions where both masks are set.
pub fn overlap_map(ma: &Mask, mb: &Mask) -> Result<CountMap> {
    let full = DisplacementDomain::full(ma.shape(), mb.shape());
    let bits_a = ma.bits();
    let bits_b = mb.bits();
    let (Some(box_a), Some(box_b)) = (
        support_box(ma.shape(), |i| bits_a[i]),
        support_box(mb.shape(), |i| bits_b[i]),
    ) else {
        return Ok(CountMap::zeros(full));
    };
    let crop = |m: &Mask, (r0, c0, s): (usize, usize, GridShape)| -> Vec<f64> {
        let mut v = Vec::with_capacity(s.len());
        for r in 0..s.height() {
            for c in 0..s.width() {
                v.push(if m.get(r + r0, c + c0) { 1.0 } else { 0.0 });
            }
        }
        v
    };
    let (va, vb) = (crop(ma, box_a), crop(mb, box_b));
    let support = DisplacementDomain::full(box_a.2, box_b.2);
    let plan = FftPlan2d::new(padded_extent(box_a.2, box_b.2));
    let fa = SpectrumCache::from_values(box_a.2, &va, SpectrumRole::Reference, &plan)?;
    let fb = SpectrumCache::from_values(box_b.2, &vb, SpectrumRole::Floating, &plan)?;
    let mut work = Work::new(&plan, &support);
    let counts = round_all(work.correlate(&fa, &fb, &support))?;
    // reuse the pair embedding with empty level sets
    let pair = Pair {
        a: Arc::new(Side {
            shape: box_a.2,
            origin: (box_a.0, box_a.1),
            levels: vec![],
            mask: vec![],
        }),
        b: Side {
            shape: box_b.2,
            origin: (box_b.0, box_b.1),
            levels: vec![],
            mask: vec![],
        },
        full,
    };
    CountMap::new(full, pair.embed(&support, &counts, 0))
}

/// Every count family, materialized. Memory grows with `k_A·k_B`; intended
/// for inspection and verification rather than bulk computation.
pub fn count_families(
    a: &LabelImage,
    ma: &Mask,
    b: &LabelImage,
    mb: &Mask,
) -> Result<CountFamilies> {
    let full = DisplacementDomain::full(a.shape(), b.shape());
    let (k_a, k_b) = (a.k(), b.k());
    let zero = || CountMap::zeros(full);
    let Some(pair) = prepare(a, ma, b, mb)? else {
        return Ok(CountFamilies {
            domain: full,
            k_a,
            k_b,
            joint: (0..k_a * k_b).map(|_| zero()).collect(),
            marginal_a: (0..k_a).map(|_| zero()).collect(),
            marginal_b: (0..k_b).map(|_| zero()).collect(),
            overlap: zero(),
        });
    };
    let support = pair.support();
    let spectra = Spectra::new(&pair, padded_extent(pair.a.shape, pair.b.shape))?;
    let mut work = Work::new(&spectra.plan, &support);
    let mut map_of = |f: Option<&SpectrumCache>, g: Option<&SpectrumCache>| -> Result<CountMap> {
        match (f, g) {
            (Some(f), Some(g)) => {
                let counts = round_all(work.correlate(f, g, &support))?;
                CountMap::new(full, pair.embed(&support, &counts, 0))
            }
            _ => Ok(zero()),
        }
    };

    let overlap = map_of(Some(&spectra.mask_a), Some(&spectra.mask_b))?;
    let mut joint = Vec::with_capacity(k_a * k_b);
    let mut marginal_a = Vec::with_capacity(k_a);
    for la in 0..k_a {
        let fa = spectra.level_a(&pair, la)?;
        marginal_a.push(map_of(fa.as_deref(), Some(&spectra.mask_b))?);
        for gb in &spectra.levels_b {
            joint.push(map_of(fa.as_deref(), gb.as_ref())?);
        }
    }
    let marginal_b = spectra
        .levels_b
        .iter()
        .map(|gb| map_of(Some(&spectra.mask_a), gb.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(CountFamilies {
        domain: full,
        k_a,
        k_b,
        joint,
        marginal_a,
        marginal_b,
        overlap,
    })
}

/// Joint histogram entry maps `C_ab(χ)`, indexed `a * k_b + b`.
pub fn joint_count_maps(
    a: &LabelImage,
    ma: &Mask,
    b: &LabelImage,
    mb: &Mask,
) -> Result<Vec<CountMap>> {
    Ok(count_families(a, ma, b, mb)?.joint)
}

/// Marginal histogram entry maps `(C_a(χ), C_b(χ))`.
pub fn marginal_count_maps(
    a: &LabelImage,
    ma: &Mask,
    b: &LabelImage,
    mb: &Mask,
) -> Result<(Vec<CountMap>, Vec<CountMap>)> {
    let f = count_families(a, ma, b, mb)?;
    Ok((f.marginal_a, f.marginal_b))
}

/// Shifted marginal and joint entropies from materialized count families.
pub fn entropy_maps(counts: &CountFamilies) -> Result<EntropyMaps> {
    let domain = counts.domain;
    let n = counts.overlap.counts();
    let max = n.iter().copied().max().unwrap_or(0);
    let table = xlogx_table(max);
    let len = domain.len();
    let sum_family = |maps: &[&CountMap]| -> Result<Vec<f64>> {
        let mut total = vec![0.0; len];
        for m in maps {
            if m.domain() != domain {
                return Err(Error::ShapeMismatch(
                    "count maps over different domains".into(),
                ));
            }
            let mut partial = vec![0.0; len];
            for (p, &c) in partial.iter_mut().zip(m.counts()) {
                *p += *table.get(c as usize).ok_or_else(|| {
                    Error::InvalidArgument("histogram count exceeds overlap count".into())
                })?;
            }
            reduce_in_order(&mut total, &partial);
        }
        Ok(total)
    };
    let s_a = sum_family(&counts.marginal_a.iter().collect::<Vec<_>>())?;
    let s_b = sum_family(&counts.marginal_b.iter().collect::<Vec<_>>())?;
    // joint sums are grouped per `a`, matching the streaming accumulation
    let mut s_ab = vec![0.0; len];
    for row in counts.joint.chunks(counts.k_b.max(1)) {
        let mut partial = vec![0.0; len];
        for m in row {
            for (p, &c) in partial.iter_mut().zip(m.counts()) {
                *p += *table.get(c as usize).ok_or_else(|| {
                    Error::InvalidArgument("histogram count exceeds overlap count".into())
                })?;
            }
        }
        reduce_in_order(&mut s_ab, &partial);
    }

    let mut maps = EntropyMaps {
        domain,
        h_a: vec![0.0; len],
        h_b: vec![0.0; len],
        h_ab: vec![0.0; len],
        valid: vec![false; len],
    };
    for i in 0..len {
        if n[i] == 0 {
            continue;
        }
        let (ha, hb, hab) = entropies(n[i] as f64, s_a[i], s_b[i], s_ab[i]);
        maps.h_a[i] = ha;
        maps.h_b[i] = hb;
        maps.h_ab[i] = hab;
        maps.valid[i] = true;
    }
    Ok(maps)
}

/// MI between `A` and `B` shifted by `χ`, for every `χ` in the full domain.
pub fn cmif_map(a: &LabelImage, ma: &Mask, b: &LabelImage, mb: &Mask) -> Result<CmifMap<u32>> {
    cmif_map_with_stats(a, ma, b, mb).map(|(m, _)| m)
}

/// [`cmif_map`] plus the number of forward and inverse transforms used.
pub fn cmif_map_with_stats(
    a: &LabelImage,
    ma: &Mask,
    b: &LabelImage,
    mb: &Mask,
) -> Result<(CmifMap<u32>, TransformStats)> {
    let Some(pair) = prepare(a, ma, b, mb)? else {
        return Ok((
            empty_map(DisplacementDomain::full(a.shape(), b.shape())),
            TransformStats::default(),
        ));
    };
    let support = pair.support();
    let spectra = Spectra::new(&pair, padded_extent(pair.a.shape, pair.b.shape))?;
    let mut work = Work::new(&spectra.plan, &support);
    let n = round_all(work.correlate(&spectra.mask_a, &spectra.mask_b, &support))?;
    let table = xlogx_table(n.iter().copied().max().unwrap_or(0));
    let sums = integer_entropy_sums(&pair, &spectra, &support, &table)?;

    let mut mi = vec![0.0; support.len()];
    let mut valid = vec![false; support.len()];
    for i in 0..support.len() {
        if n[i] > 0 {
            mi[i] = mutual_information(n[i] as f64, sums.s_a[i], sums.s_b[i], sums.s_ab[i]);
            valid[i] = true;
        }
    }
    let map = CmifMap {
        domain: pair.full,
        mi: pair.embed(&support, &mi, 0.0),
        n: pair.embed(&support, &n, 0),
        valid: pair.embed(&support, &valid, false),
    };
    Ok((map, TransformStats::of(&[&spectra.plan])))
}

/// Best displacement among cells whose overlap reaches `gamma · max N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatedPeak {
    pub displacement: Displacement,
    pub mi: f64,
    pub n: u32,
    pub max_n: u32,
}

/// Ordering used to pick a peak: higher MI, then larger overlap, then the
/// lexicographically smallest displacement.
#[inline]
pub(crate) fn beats(mi: f64, n: f64, chi: Displacement, best: (f64, f64, Displacement)) -> bool {
    mi > best.0 || (mi == best.0 && (n > best.1 || (n == best.1 && chi < best.2)))
}

/// Same answer as gating and maximizing a full [`cmif_map`], but entropies
/// are only evaluated on the bounding window of the gated cells, using the
/// smallest transform extent that is alias-free on that window.
///
/// Returns `None` when the masks never overlap.
pub fn gated_peak(
    a: &LabelImage,
    ma: &Mask,
    b: &LabelImage,
    mb: &Mask,
    gamma: f64,
) -> Result<Option<GatedPeak>> {
    gated_peak_with_stats(a, ma, b, mb, gamma).map(|(p, _)| p)
}

pub fn gated_peak_with_stats(
    a: &LabelImage,
    ma: &Mask,
    b: &LabelImage,
    mb: &Mask,
    gamma: f64,
) -> Result<(Option<GatedPeak>, TransformStats)> {
    let cache = ReferenceCache::new(a, ma)?;
    let peak = cache.gated_peak(b, mb, gamma)?;
    Ok((peak, cache.stats()))
}

/// Reference image prepared once for many [`gated_peak`] queries against
/// different floating images, as in an exhaustive angle search. Reference
/// spectra are kept per transform extent.
pub struct ReferenceCache {
    shape: GridShape,
    side: Option<Arc<Side>>,
    spectra: Mutex<HashMap<GridShape, Arc<ReferenceSpectra>>>,
}

impl Clone for ReferenceCache {
    /// Shares the prepared reference; spectra are rebuilt on demand.
    fn clone(&self) -> Self {
        Self {
            shape: self.shape,
            side: self.side.clone(),
            spectra: Mutex::new(HashMap::new()),
        }
    }
}

impl std::fmt::Debug for ReferenceCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReferenceCache")
            .field("shape", &self.shape)
            .finish_non_exhaustive()
    }
}

impl ReferenceCache {
    pub fn new(a: &LabelImage, ma: &Mask) -> Result<Self> {
        Ok(Self {
            shape: a.shape(),
            side: Side::binary(a, ma)?.map(Arc::new),
            spectra: Mutex::new(HashMap::new()),
        })
    }

    /// Transform counts summed over every extent used so far.
    pub fn stats(&self) -> TransformStats {
        let map = self.spectra.lock().expect("reference cache");
        let plans: Vec<&Arc<FftPlan2d>> = map.values().map(|r| &r.plan).collect();
        TransformStats::of(&plans)
    }

    fn reference(
        &self,
        side: &Side,
        extent: GridShape,
        levels: bool,
    ) -> Result<Arc<ReferenceSpectra>> {
        let mut map = self.spectra.lock().expect("reference cache");
        if let Some(r) = map.get(&extent) {
            if !levels || r.levels.is_some() {
                return Ok(r.clone());
            }
        }
        let fresh = match map.remove(&extent) {
            Some(r) => Arc::try_unwrap(r).unwrap_or_else(|r| ReferenceSpectra {
                plan: r.plan.clone(),
                mask: r.mask.clone(),
                levels: None,
            }),
            None => ReferenceSpectra::new(side, extent)?,
        };
        let fresh = Arc::new(if levels {
            fresh.with_levels(side)?
        } else {
            fresh
        });
        map.insert(extent, fresh.clone());
        Ok(fresh)
    }

    /// See [`gated_peak`].
    pub fn gated_peak(&self, b: &LabelImage, mb: &Mask, gamma: f64) -> Result<Option<GatedPeak>> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!(
                "gamma {gamma} outside [0, 1]"
            )));
        }
        let full = DisplacementDomain::full(self.shape, b.shape());
        let (Some(sa), Some(sb)) = (&self.side, Side::binary(b, mb)?) else {
            return Ok(None);
        };
        let pair = Pair {
            a: sa.clone(),
            b: sb,
            full,
        };
        let support = pair.support();
        let n_full = {
            let reference =
                self.reference(&pair.a, padded_extent(pair.a.shape, pair.b.shape), false)?;
            let fb = SpectrumCache::from_values(
                pair.b.shape,
                &pair.b.mask,
                SpectrumRole::Floating,
                &reference.plan,
            )?;
            let mut work = Work::new(&reference.plan, &support);
            round_all(work.correlate(&reference.mask, &fb, &support))?
        };
        let max_n = n_full.iter().copied().max().unwrap_or(0);
        if max_n == 0 {
            return Ok(None);
        }
        let threshold = gamma * max_n as f64;
        let gated = |n: u32| n > 0 && n as f64 >= threshold;

        let sw = support.extent().width();
        let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
        for (i, &n) in n_full.iter().enumerate() {
            if gated(n) {
                let (r, c) = (i / sw, i % sw);
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
        let window = DisplacementDomain::new(
            support.origin() + Displacement::new(r0 as isize, c0 as isize),
            GridShape::new(r1 - r0 + 1, c1 - c0 + 1).expect("max cell is gated"),
        );
        let n_win: Vec<u32> = (r0..=r1)
            .flat_map(|r| n_full[r * sw + c0..=r * sw + c1].iter().copied())
            .collect();

        let extent = windowed_extent(pair.a.shape, pair.b.shape, &window);
        let reference = self.reference(&pair.a, extent, true)?;
        let spectra = Spectra::with_reference(&pair, &reference)?;
        let table = xlogx_table(max_n);
        let sums = integer_entropy_sums(&pair, &spectra, &window, &table)?;

        let off = pair.offset();
        let mut best: Option<GatedPeak> = None;
        for (i, &n) in n_win.iter().enumerate() {
            if !gated(n) {
                continue;
            }
            let mi = mutual_information(n as f64, sums.s_a[i], sums.s_b[i], sums.s_ab[i]);
            let chi = window.shift(i) + off;
            let better = match &best {
                None => true,
                Some(p) => beats(mi, n as f64, chi, (p.mi, p.n as f64, p.displacement)),
            };
            if better {
                best = Some(GatedPeak {
                    displacement: chi,
                    mi,
                    n,
                    max_n,
                });
            }
        }
        Ok(best)
    }
}

/// Spatially weighted MI at every displacement. Each pixel pair contributes
/// with weight `W_A(x)·W_B(x + χ)`; counts stay real-valued.
pub fn swmi_map(
    a: &LabelImage,
    wa: &WeightMask,
    b: &LabelImage,
    wb: &WeightMask,
) -> Result<CmifMap<f64>> {
    let full = DisplacementDomain::full(a.shape(), b.shape());
    let (Some(sa), Some(sb)) = (Side::weighted(a, wa)?, Side::weighted(b, wb)?) else {
        return Ok(CmifMap {
            domain: full,
            mi: vec![0.0; full.len()],
            n: vec![0.0; full.len()],
            valid: vec![false; full.len()],
        });
    };
    let pair = Pair {
        a: Arc::new(sa),
        b: sb,
        full,
    };
    let support = pair.support();
    let spectra = Spectra::new(&pair, padded_extent(pair.a.shape, pair.b.shape))?;
    let len = support.len();
    let mut work = Work::new(&spectra.plan, &support);

    let n: Vec<f64> = work
        .correlate(&spectra.mask_a, &spectra.mask_b, &support)
        .iter()
        .map(|&v| v.max(0.0))
        .collect();
    let max_n = n.iter().copied().fold(0.0, f64::max);
    // transform round-off floor, relative to the largest weight sum
    let floor = 1e-11 * max_n;
    let xlogx = |c: f64| if c > floor { c * c.log2() } else { 0.0 };

    let mut s_a = vec![0.0; len];
    let mut s_ab = vec![0.0; len];
    for la in 0..pair.a.k() {
        let Some(fa) = spectra.level_a(&pair, la)? else {
            continue;
        };
        let marg: Vec<f64> = work
            .correlate(&fa, &spectra.mask_b, &support)
            .iter()
            .map(|&c| xlogx(c))
            .collect();
        reduce_in_order(&mut s_a, &marg);
        let mut joint = vec![0.0; len];
        for gb in spectra.levels_b.iter().flatten() {
            for (acc, &c) in joint.iter_mut().zip(work.correlate(&fa, gb, &support)) {
                *acc += xlogx(c);
            }
        }
        reduce_in_order(&mut s_ab, &joint);
    }
    let mut s_b = vec![0.0; len];
    for gb in spectra.levels_b.iter().flatten() {
        let marg: Vec<f64> = work
            .correlate(&spectra.mask_a, gb, &support)
            .iter()
            .map(|&c| xlogx(c))
            .collect();
        reduce_in_order(&mut s_b, &marg);
    }

    let mut mi = vec![0.0; len];
    let mut valid = vec![false; len];
    for i in 0..len {
        if n[i] > floor && n[i] > 0.0 {
            mi[i] = mutual_information(n[i], s_a[i], s_b[i], s_ab[i]);
            valid[i] = true;
        }
    }
    Ok(CmifMap {
        domain: full,
        mi: pair.embed(&support, &mi, 0.0),
        n: pair.embed(&support, &n, 0.0),
        valid: pair.embed(&support, &valid, false),
    })
}
