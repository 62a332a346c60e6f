//! Linear cross-correlation of non-negative grids through 2D real FFTs.
//!
//! `corr(χ) = Σ_x f(x)·g(x + χ)` is evaluated as the inverse transform of
//! `conj(F)·G`. Both grids are zero-padded to an extent large enough that the
//! circular result does not wrap onto the displacements being read back.

use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::domain::{CountMap, Displacement, DisplacementDomain};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridShape};

pub type C64 = Complex<f64>;

/// Residual above which rounding a correlation to an integer count is refused.
pub const ROUNDING_HEALTH_LIMIT: f64 = 0.25;

/// Smallest `n' >= n` whose prime factors are all in {2, 3, 5, 7}.
pub fn next_smooth(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5, 7] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Transform extent for the full linear correlation of the two shapes.
pub fn padded_extent(reference: GridShape, floating: GridShape) -> GridShape {
    let d = DisplacementDomain::full(reference, floating).extent();
    GridShape::new(next_smooth(d.height()), next_smooth(d.width())).expect("positive")
}

/// Smallest transform extent that still yields exact correlation values for
/// every displacement in `window`.
///
/// Circular correlation of size `P` folds displacement `χ` onto `χ ± P`. The
/// folded copies are zero as long as they fall outside the support
/// `[1 - h_ref, h_flt - 1]` of the linear correlation.
pub fn windowed_extent(
    reference: GridShape,
    floating: GridShape,
    window: &DisplacementDomain,
) -> GridShape {
    let axis = |h_ref: usize, h_flt: usize, w0: isize, len: usize| {
        let s0 = 1 - h_ref as isize;
        let s1 = h_flt as isize - 1;
        let w1 = w0 + len as isize - 1;
        let need = (s1 - w0).max(w1 - s0) + 1;
        let fits = h_ref.max(h_flt).max(len) as isize;
        next_smooth(need.max(fits) as usize)
    };
    GridShape::new(
        axis(
            reference.height(),
            floating.height(),
            window.origin().row,
            window.extent().height(),
        ),
        axis(
            reference.width(),
            floating.width(),
            window.origin().col,
            window.extent().width(),
        ),
    )
    .expect("positive")
}

fn real_planner() -> &'static Mutex<RealFftPlanner<f64>> {
    static P: OnceLock<Mutex<RealFftPlanner<f64>>> = OnceLock::new();
    P.get_or_init(|| Mutex::new(RealFftPlanner::new()))
}

fn complex_planner() -> &'static Mutex<FftPlanner<f64>> {
    static P: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    P.get_or_init(|| Mutex::new(FftPlanner::new()))
}

/// Planned 2D real transforms of one padded extent.
///
/// Spectra hold the `width / 2 + 1` non-redundant frequency columns, stored
/// column-major (each column contiguous, `height` long).
pub struct FftPlan2d {
    extent: GridShape,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    forward_count: AtomicUsize,
    inverse_count: AtomicUsize,
}

impl std::fmt::Debug for FftPlan2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPlan2d")
            .field("extent", &self.extent)
            .field("forward_count", &self.forward_count())
            .field("inverse_count", &self.inverse_count())
            .finish()
    }
}

impl FftPlan2d {
    pub fn new(extent: GridShape) -> Arc<Self> {
        let (r2c, c2r) = {
            let mut p = real_planner().lock().expect("planner lock");
            (
                p.plan_fft_forward(extent.width()),
                p.plan_fft_inverse(extent.width()),
            )
        };
        let (col_fwd, col_inv) = {
            let mut p = complex_planner().lock().expect("planner lock");
            (
                p.plan_fft_forward(extent.height()),
                p.plan_fft_inverse(extent.height()),
            )
        };
        Arc::new(Self {
            extent,
            r2c,
            c2r,
            col_fwd,
            col_inv,
            forward_count: AtomicUsize::new(0),
            inverse_count: AtomicUsize::new(0),
        })
    }

    #[inline]
    pub fn extent(&self) -> GridShape {
        self.extent
    }

    #[inline]
    pub fn spectrum_len(&self) -> usize {
        self.half_width() * self.extent.height()
    }

    #[inline]
    fn half_width(&self) -> usize {
        self.extent.width() / 2 + 1
    }

    pub fn forward_count(&self) -> usize {
        self.forward_count.load(Ordering::Relaxed)
    }

    pub fn inverse_count(&self) -> usize {
        self.inverse_count.load(Ordering::Relaxed)
    }

    /// Forward transform of a row-major `shape` grid placed at the origin of
    /// the zero-padded extent.
    pub(crate) fn forward(&self, shape: GridShape, values: &[f64]) -> Vec<C64> {
        debug_assert_eq!(values.len(), shape.len());
        debug_assert!(
            shape.height() <= self.extent.height() && shape.width() <= self.extent.width()
        );
        self.forward_count.fetch_add(1, Ordering::Relaxed);
        let (ph, pw, hw) = (self.extent.height(), self.extent.width(), self.half_width());
        let mut spec = vec![C64::new(0.0, 0.0); hw * ph];
        let mut row_in = vec![0.0; pw];
        let mut row_out = vec![C64::new(0.0, 0.0); hw];
        let mut scratch = vec![C64::new(0.0, 0.0); self.r2c.get_scratch_len()];
        let w = shape.width();
        for (r, src) in values.chunks_exact(w).enumerate() {
            if src.iter().all(|&v| v == 0.0) {
                continue;
            }
            row_in[..w].copy_from_slice(src);
            row_in[w..].fill(0.0);
            self.r2c
                .process_with_scratch(&mut row_in, &mut row_out, &mut scratch)
                .expect("buffer sizes match the plan");
            for (c, v) in row_out.iter().enumerate() {
                spec[c * ph + r] = *v;
            }
        }
        let mut scratch = vec![C64::new(0.0, 0.0); self.col_fwd.get_inplace_scratch_len()];
        self.col_fwd.process_with_scratch(&mut spec, &mut scratch);
        spec
    }

    pub(crate) fn scratch(&self) -> Scratch {
        let (ph, hw) = (self.extent.height(), self.half_width());
        let zero = C64::new(0.0, 0.0);
        Scratch {
            product: vec![zero; hw * ph],
            col: vec![zero; self.col_inv.get_inplace_scratch_len()],
            row: vec![zero; hw * GATHER_ROWS],
            line: vec![0.0; self.extent.width()],
            c2r: vec![zero; self.c2r.get_scratch_len()],
        }
    }

    /// Inverse transform of `scratch.product` (destroyed), reading back the
    /// displacement rows `rows` and columns `cols`. Indices wrap modulo the
    /// extent. Output is row-major `rows.len() × cols.len()`, normalized.
    pub(crate) fn inverse_window(
        &self,
        scratch: &mut Scratch,
        rows: Range<isize>,
        cols: Range<isize>,
        out: &mut [f64],
    ) {
        let (ph, pw, hw) = (self.extent.height(), self.extent.width(), self.half_width());
        let Scratch {
            product: spectrum,
            col,
            row,
            line,
            c2r,
        } = scratch;
        debug_assert_eq!(spectrum.len(), hw * ph);
        let out_w = (cols.end - cols.start) as usize;
        debug_assert_eq!(out.len(), (rows.end - rows.start) as usize * out_w);
        self.inverse_count.fetch_add(1, Ordering::Relaxed);

        self.col_inv.process_with_scratch(spectrum, col);

        let norm = 1.0 / (ph * pw) as f64;
        let col0 = cols.start.rem_euclid(pw as isize) as usize;
        let rows: Vec<usize> = rows.map(|r| r.rem_euclid(ph as isize) as usize).collect();
        for (block, dst_block) in rows
            .chunks(GATHER_ROWS)
            .zip(out.chunks_mut(GATHER_ROWS * out_w))
        {
            // gather several rows per pass so each column is read in one sweep
            for (c, column) in spectrum.chunks_exact(ph).enumerate() {
                for (j, &m) in block.iter().enumerate() {
                    row[j * hw + c] = column[m];
                }
            }
            for (j, dst) in dst_block.chunks_exact_mut(out_w).enumerate() {
                let r = &mut row[j * hw..(j + 1) * hw];
                // Hermitian symmetry forces these bins real; drop round-off.
                r[0].im = 0.0;
                if pw % 2 == 0 {
                    r[hw - 1].im = 0.0;
                }
                self.c2r
                    .process_with_scratch(r, line, c2r)
                    .expect("buffer sizes match the plan");
                let head = (pw - col0).min(out_w);
                for (d, v) in dst[..head].iter_mut().zip(&line[col0..]) {
                    *d = v * norm;
                }
                for (d, v) in dst[head..].iter_mut().zip(&line[..]) {
                    *d = v * norm;
                }
            }
        }
    }
}

/// Output rows gathered per sweep over the column-transformed spectrum.
const GATHER_ROWS: usize = 8;

/// Work buffers for repeated correlations with one plan.
pub(crate) struct Scratch {
    product: Vec<C64>,
    col: Vec<C64>,
    row: Vec<C64>,
    line: Vec<f64>,
    c2r: Vec<C64>,
}

/// Which side of a correlation a cached spectrum stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumRole {
    /// Left operand `f`; stored conjugated.
    Reference,
    /// Right operand `g`, the grid being shifted.
    Floating,
}

/// Forward transform of a zero-padded grid, reusable across partners that
/// share the same padded extent.
#[derive(Debug, Clone)]
pub struct SpectrumCache {
    shape: GridShape,
    role: SpectrumRole,
    plan: Arc<FftPlan2d>,
    data: Vec<C64>,
}

impl SpectrumCache {
    pub fn new<T: Copy + Into<f64>>(
        grid: &Grid<T>,
        role: SpectrumRole,
        plan: &Arc<FftPlan2d>,
    ) -> Result<Self> {
        let values: Vec<f64> = grid.data().iter().map(|&v| v.into()).collect();
        Self::from_values(grid.shape(), &values, role, plan)
    }

    pub(crate) fn from_values(
        shape: GridShape,
        values: &[f64],
        role: SpectrumRole,
        plan: &Arc<FftPlan2d>,
    ) -> Result<Self> {
        let ext = plan.extent();
        if shape.height() > ext.height() || shape.width() > ext.width() {
            return Err(Error::ExtentMismatch(format!(
                "grid {shape} does not fit transform extent {ext}"
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "correlation input at index {i} is negative or non-finite"
            )));
        }
        let mut data = plan.forward(shape, values);
        if role == SpectrumRole::Reference {
            data.iter_mut().for_each(|v| *v = v.conj());
        }
        Ok(Self {
            shape,
            role,
            plan: Arc::clone(plan),
            data,
        })
    }

    #[inline]
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    #[inline]
    pub fn role(&self) -> SpectrumRole {
        self.role
    }

    #[inline]
    pub fn extent(&self) -> GridShape {
        self.plan.extent()
    }

    pub fn plan(&self) -> &Arc<FftPlan2d> {
        &self.plan
    }

    /// Element-wise product with `floating`, written into `out`.
    #[inline]
    fn product_into(&self, floating: &SpectrumCache, out: &mut [C64]) {
        for ((o, a), b) in out.iter_mut().zip(&self.data).zip(&floating.data) {
            *o = a * b;
        }
    }

    fn check_partner(&self, floating: &SpectrumCache, window: &DisplacementDomain) -> Result<()> {
        if self.role != SpectrumRole::Reference || floating.role != SpectrumRole::Floating {
            return Err(Error::InvalidArgument(
                "correlate_cached expects (reference, floating) spectra".into(),
            ));
        }
        if !Arc::ptr_eq(&self.plan, &floating.plan) && self.extent() != floating.extent() {
            return Err(Error::ExtentMismatch(format!(
                "{} vs {}",
                self.extent(),
                floating.extent()
            )));
        }
        let needed = windowed_extent(self.shape, floating.shape, window);
        let ext = self.extent();
        if ext.height() < needed.height() || ext.width() < needed.width() {
            return Err(Error::ExtentMismatch(format!(
                "extent {ext} aliases the requested displacements (needs {needed})"
            )));
        }
        Ok(())
    }

    /// Correlation values on `window`, which must be alias-free for this extent.
    pub(crate) fn correlate_window(
        &self,
        floating: &SpectrumCache,
        window: &DisplacementDomain,
        scratch: &mut Scratch,
        out: &mut [f64],
    ) {
        self.product_into(floating, &mut scratch.product);
        let o = window.origin();
        let e = window.extent();
        self.plan.inverse_window(
            scratch,
            o.row..o.row + e.height() as isize,
            o.col..o.col + e.width() as isize,
            out,
        );
    }
}

/// Real-valued map over a displacement domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    pub domain: DisplacementDomain,
    pub values: Vec<f64>,
}

impl Correlation {
    pub fn at(&self, chi: Displacement) -> Option<f64> {
        self.domain.index(chi).map(|i| self.values[i])
    }
}

/// Full linear cross-correlation `Σ_x f(x)·g(x + χ)` of two non-negative grids.
pub fn cross_correlate<T: Copy + Into<f64>>(f: &Grid<T>, g: &Grid<T>) -> Result<Correlation> {
    let plan = FftPlan2d::new(padded_extent(f.shape(), g.shape()));
    let fs = SpectrumCache::new(f, SpectrumRole::Reference, &plan)?;
    let gs = SpectrumCache::new(g, SpectrumRole::Floating, &plan)?;
    correlate_cached(&fs, &gs)
}

/// Same result as [`cross_correlate`], from precomputed spectra.
pub fn correlate_cached(f: &SpectrumCache, g: &SpectrumCache) -> Result<Correlation> {
    let domain = DisplacementDomain::full(f.shape, g.shape);
    f.check_partner(g, &domain)?;
    let mut values = vec![0.0; domain.len()];
    f.correlate_window(g, &domain, &mut f.plan.scratch(), &mut values);
    Ok(Correlation { domain, values })
}

/// Rounds one correlation value to a count, enforcing the health limit.
#[inline]
pub(crate) fn round_count(raw: f64, index: usize) -> Result<u32> {
    // saturating truncation; negative and NaN inputs land on 0 and fail the residual test
    let r = (raw + 0.5) as u32;
    let residual = (raw - r as f64).abs();
    if residual.is_nan() || residual >= ROUNDING_HEALTH_LIMIT {
        return Err(Error::NumericalHealth { residual, index });
    }
    Ok(r)
}

/// Rounds correlations of 0/1 grids to exact integer counts.
pub fn round_counts(raw: &Correlation) -> Result<CountMap> {
    let counts = raw
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| round_count(v, i))
        .collect::<Result<Vec<u32>>>()?;
    CountMap::new(raw.domain, counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Literal `Σ_x f(x) g(x + χ)` over the full domain.
    fn brute(f: &Grid<f64>, g: &Grid<f64>) -> Vec<f64> {
        let d = DisplacementDomain::full(f.shape(), g.shape());
        d.iter()
            .map(|chi| {
                let mut s = 0.0;
                for r in 0..f.shape().height() {
                    for c in 0..f.shape().width() {
                        let (gr, gc) = (r as isize + chi.row, c as isize + chi.col);
                        if g.shape().contains(gr, gc) {
                            s += f.get(r, c) * g.get(gr as usize, gc as usize);
                        }
                    }
                }
                s
            })
            .collect()
    }

    fn random_binary(shape: GridShape, rng: &mut ChaCha8Rng) -> Grid<f64> {
        Grid::from_fn(shape, |_, _| if rng.random::<bool>() { 1.0 } else { 0.0 })
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(next_smooth(1), 1);
        assert_eq!(next_smooth(11), 12);
        assert_eq!(next_smooth(767), 768);
        assert_eq!(next_smooth(1023), 1024);
        assert_eq!(next_smooth(361), 375);
    }

    #[test]
    fn delta_correlation() {
        let shape = GridShape::square(3);
        let f = Grid::from_fn(shape, |r, c| ((r, c) == (0, 0)) as u8);
        let corr = round_counts(&cross_correlate(&f, &f).unwrap()).unwrap();
        for chi in corr.domain().iter() {
            let expect = (chi == Displacement::ZERO) as u32;
            assert_eq!(corr.at(chi).unwrap(), expect, "at {chi:?}");
        }
    }

    #[test]
    fn overlap_pyramid() {
        let ones = Grid::filled(GridShape::square(2), 1u8);
        let corr = round_counts(&cross_correlate(&ones, &ones).unwrap()).unwrap();
        assert_eq!(corr.domain().extent(), GridShape::square(3));
        assert_eq!(corr.counts(), &[1, 2, 1, 2, 4, 2, 1, 2, 1]);
        assert_eq!(corr.at(Displacement::ZERO), Some(4));
    }

    #[test]
    fn random_binary_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (sf, sg) in [((16, 16), (16, 16)), ((13, 9), (5, 11)), ((1, 7), (3, 1))] {
            let f = random_binary(GridShape::new(sf.0, sf.1).unwrap(), &mut rng);
            let g = random_binary(GridShape::new(sg.0, sg.1).unwrap(), &mut rng);
            let got = round_counts(&cross_correlate(&f, &g).unwrap()).unwrap();
            let want: Vec<u32> = brute(&f, &g).iter().map(|&v| v as u32).collect();
            assert_eq!(got.counts(), &want[..]);
        }
    }

    #[test]
    fn binary_64_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let f = random_binary(GridShape::square(64), &mut rng);
        let g = random_binary(GridShape::square(64), &mut rng);
        let got = round_counts(&cross_correlate(&f, &g).unwrap()).unwrap();
        let want: Vec<u32> = brute(&f, &g).iter().map(|&v| v as u32).collect();
        assert_eq!(got.counts(), &want[..]);
    }

    #[test]
    fn rounding_rules() {
        let d = DisplacementDomain::full(GridShape::square(1), GridShape::new(1, 3).unwrap());
        let raw = Correlation {
            domain: d,
            values: vec![3.9999999, -1e-12, 2.2],
        };
        assert_eq!(round_counts(&raw).unwrap().counts(), &[4, 0, 2]);
        let bad = Correlation {
            domain: d,
            values: vec![1.0, 1.3, 0.0],
        };
        assert!(matches!(
            round_counts(&bad),
            Err(Error::NumericalHealth { index: 1, .. })
        ));
    }

    #[test]
    fn cached_matches_uncached_and_is_reusable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_binary(GridShape::new(10, 12).unwrap(), &mut rng);
        let g1 = random_binary(GridShape::new(6, 8).unwrap(), &mut rng);
        let g2 = random_binary(GridShape::new(6, 8).unwrap(), &mut rng);
        let plan = FftPlan2d::new(padded_extent(f.shape(), g1.shape()));
        let fs = SpectrumCache::new(&f, SpectrumRole::Reference, &plan).unwrap();
        for g in [&g1, &g2] {
            let gs = SpectrumCache::new(g, SpectrumRole::Floating, &plan).unwrap();
            let cached = round_counts(&correlate_cached(&fs, &gs).unwrap()).unwrap();
            let direct = round_counts(&cross_correlate(&f, g).unwrap()).unwrap();
            assert_eq!(cached, direct);
        }
        assert_eq!(plan.forward_count(), 3);
        assert_eq!(plan.inverse_count(), 2);
    }

    #[test]
    fn cached_rejects_mismatched_extent_and_roles() {
        let f = Grid::filled(GridShape::square(4), 1.0);
        let p1 = FftPlan2d::new(GridShape::square(8));
        let p2 = FftPlan2d::new(GridShape::square(9));
        let a = SpectrumCache::new(&f, SpectrumRole::Reference, &p1).unwrap();
        let b = SpectrumCache::new(&f, SpectrumRole::Floating, &p2).unwrap();
        assert!(matches!(
            correlate_cached(&a, &b),
            Err(Error::ExtentMismatch(_))
        ));
        let small = FftPlan2d::new(GridShape::square(5));
        let a = SpectrumCache::new(&f, SpectrumRole::Reference, &small).unwrap();
        let b = SpectrumCache::new(&f, SpectrumRole::Floating, &small).unwrap();
        assert!(matches!(
            correlate_cached(&a, &b),
            Err(Error::ExtentMismatch(_))
        ));
        assert!(correlate_cached(&b, &a).is_err());
    }

    #[test]
    fn rejects_negative_input() {
        let f = Grid::filled(GridShape::square(2), -1.0);
        assert!(cross_correlate(&f, &f).is_err());
    }

    #[test]
    fn windowed_extent_is_alias_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = random_binary(GridShape::square(20), &mut rng);
        let g = random_binary(GridShape::square(20), &mut rng);
        let full = DisplacementDomain::full(f.shape(), g.shape());
        let window =
            DisplacementDomain::new(Displacement::new(-6, -4), GridShape::new(9, 13).unwrap());
        let ext = windowed_extent(f.shape(), g.shape(), &window);
        assert!(ext.height() < full.extent().height());
        let plan = FftPlan2d::new(ext);
        let fs = SpectrumCache::new(&f, SpectrumRole::Reference, &plan).unwrap();
        let gs = SpectrumCache::new(&g, SpectrumRole::Floating, &plan).unwrap();
        let mut out = vec![0.0; window.len()];
        fs.correlate_window(&gs, &window, &mut plan.scratch(), &mut out);
        let want = brute(&f, &g);
        for (i, chi) in window.iter().enumerate() {
            let j = full.index(chi).unwrap();
            assert_eq!(out[i].round(), want[j], "at {chi:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn symmetry_and_mass(h1 in 1usize..12, w1 in 1usize..12, h2 in 1usize..12, w2 in 1usize..12, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_binary(GridShape::new(h1, w1).unwrap(), &mut rng);
            let g = random_binary(GridShape::new(h2, w2).unwrap(), &mut rng);
            let fg = round_counts(&cross_correlate(&f, &g).unwrap()).unwrap();
            let gf = round_counts(&cross_correlate(&g, &f).unwrap()).unwrap();
            for chi in fg.domain().iter() {
                prop_assert_eq!(fg.at(chi), gf.at(-chi));
            }
            let sf: f64 = f.data().iter().sum();
            let sg: f64 = g.data().iter().sum();
            prop_assert_eq!(fg.total(), (sf * sg) as u64);
        }

        #[test]
        fn weighted_inputs_match_brute(h in 1usize..10, w in 1usize..10, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = GridShape::new(h, w).unwrap();
            let f = Grid::from_fn(shape, |_, _| rng.random::<f64>() * 3.0);
            let g = Grid::from_fn(shape, |_, _| rng.random::<f64>());
            let got = cross_correlate(&f, &g).unwrap();
            let want = brute(&f, &g);
            let scale = want.iter().cloned().fold(0.0, f64::max).max(1e-300);
            for (a, b) in got.values.iter().zip(&want) {
                prop_assert!((a - b).abs() <= 1e-9 * scale);
            }
        }
    }
}
