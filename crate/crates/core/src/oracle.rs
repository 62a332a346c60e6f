//! Direct histogram evaluation of the CMIF, one displacement at a time.
//!
//! Slow and literal: for every `χ` the overlap is scanned and a joint
//! histogram is incremented pixel by pixel. Used as the reference that the
//! frequency-domain path is checked and timed against.

use rayon::prelude::*;

use crate::cmif::{CmifMap, CountFamilies};
use crate::domain::{CountMap, Displacement, DisplacementDomain};
use crate::error::{Error, Result};
use crate::grid::{GridShape, LabelImage, Mask};

/// Per-pixel histogram code: the label when the pixel is in the mask,
/// otherwise a trailing discard bin `k`.
fn codes(labels: &LabelImage, mask: &Mask) -> Result<Vec<usize>> {
    if labels.shape() != mask.shape() {
        return Err(Error::ShapeMismatch(format!(
            "labels {} vs mask {}",
            labels.shape(),
            mask.shape()
        )));
    }
    let k = labels.k();
    Ok(labels
        .labels()
        .iter()
        .zip(mask.bits())
        .map(|(&l, &m)| if m && (l as usize) < k { l as usize } else { k })
        .collect())
}

/// Joint histogram at one displacement, `(k_a + 1) × (k_b + 1)` bins with
/// the discard bins last.
struct Scanner {
    sa: GridShape,
    sb: GridShape,
    ca: Vec<usize>,
    cb: Vec<usize>,
    ka: usize,
    kb: usize,
}

impl Scanner {
    fn new(a: &LabelImage, ma: &Mask, b: &LabelImage, mb: &Mask) -> Result<Self> {
        Ok(Self {
            sa: a.shape(),
            sb: b.shape(),
            ca: codes(a, ma)?,
            cb: codes(b, mb)?,
            ka: a.k(),
            kb: b.k(),
        })
    }

    fn stride(&self) -> usize {
        self.kb + 1
    }

    fn histogram(&self, chi: Displacement, hist: &mut [u32]) {
        hist.fill(0);
        let stride = self.stride();
        let (ha, wa) = (self.sa.height() as isize, self.sa.width() as isize);
        let (hb, wb) = (self.sb.height() as isize, self.sb.width() as isize);
        let r0 = 0.max(-chi.row);
        let r1 = ha.min(hb - chi.row);
        let c0 = 0.max(-chi.col);
        let c1 = wa.min(wb - chi.col);
        if r0 >= r1 || c0 >= c1 {
            return;
        }
        let len = (c1 - c0) as usize;
        for r in r0..r1 {
            let ia = (r * wa + c0) as usize;
            let ib = ((r + chi.row) * wb + c0 + chi.col) as usize;
            for (&x, &y) in self.ca[ia..ia + len].iter().zip(&self.cb[ib..ib + len]) {
                hist[x * stride + y] += 1;
            }
        }
    }
}

/// Counts read off one joint histogram.
struct CellCounts {
    joint: Vec<u32>,
    marg_a: Vec<u32>,
    marg_b: Vec<u32>,
    n: u32,
}

fn split(hist: &[u32], ka: usize, kb: usize) -> CellCounts {
    let stride = kb + 1;
    let mut joint = vec![0; ka * kb];
    let mut marg_a = vec![0; ka];
    let mut marg_b = vec![0; kb];
    let mut n = 0;
    for a in 0..ka {
        for b in 0..kb {
            let c = hist[a * stride + b];
            joint[a * kb + b] = c;
            marg_a[a] += c;
            marg_b[b] += c;
            n += c;
        }
    }
    CellCounts {
        joint,
        marg_a,
        marg_b,
        n,
    }
}

/// `−Σ p·log2 p` over counts with total `n`.
fn entropy(counts: &[u32], n: u32) -> f64 {
    let n = n as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>()
}

fn cell_mi(c: &CellCounts) -> Option<f64> {
    (c.n > 0).then(|| entropy(&c.marg_a, c.n) + entropy(&c.marg_b, c.n) - entropy(&c.joint, c.n))
}

/// Direct CMIF map together with every histogram count family.
///
/// Memory holds `k_A·k_B` count maps; for large inputs use [`direct_mi_map`].
pub fn direct_cmif_map(
    a: &LabelImage,
    ma: &Mask,
    b: &LabelImage,
    mb: &Mask,
) -> Result<(CmifMap<u32>, CountFamilies)> {
    let scan = Scanner::new(a, ma, b, mb)?;
    let domain = DisplacementDomain::full(a.shape(), b.shape());
    let (ka, kb) = (scan.ka, scan.kb);
    let cells: Vec<(Option<f64>, CellCounts)> = (0..domain.len())
        .into_par_iter()
        .map_init(
            || vec![0u32; (ka + 1) * (kb + 1)],
            |hist, i| {
                scan.histogram(domain.shift(i), hist);
                let c = split(hist, ka, kb);
                (cell_mi(&c), c)
            },
        )
        .collect();

    let plane = |f: &dyn Fn(&CellCounts) -> u32| -> CountMap {
        CountMap::new(domain, cells.iter().map(|(_, c)| f(c)).collect())
            .expect("one cell per displacement")
    };
    let joint = (0..ka * kb).map(|j| plane(&|c| c.joint[j])).collect();
    let marginal_a = (0..ka).map(|j| plane(&|c| c.marg_a[j])).collect();
    let marginal_b = (0..kb).map(|j| plane(&|c| c.marg_b[j])).collect();
    let overlap = plane(&|c| c.n);
    let map = CmifMap::new(
        domain,
        cells.iter().map(|(m, _)| m.unwrap_or(0.0)).collect(),
        overlap.counts().to_vec(),
        cells.iter().map(|(m, _)| m.is_some()).collect(),
    )?;
    Ok((
        map,
        CountFamilies {
            domain,
            k_a: ka,
            k_b: kb,
            joint,
            marginal_a,
            marginal_b,
            overlap,
        },
    ))
}

/// Direct CMIF map without retaining the count families.
pub fn direct_mi_map(a: &LabelImage, ma: &Mask, b: &LabelImage, mb: &Mask) -> Result<CmifMap<u32>> {
    let scan = Scanner::new(a, ma, b, mb)?;
    let domain = DisplacementDomain::full(a.shape(), b.shape());
    let (ka, kb) = (scan.ka, scan.kb);
    let cells: Vec<(Option<f64>, u32)> = (0..domain.len())
        .into_par_iter()
        .map_init(
            || vec![0u32; (ka + 1) * (kb + 1)],
            |hist, i| {
                scan.histogram(domain.shift(i), hist);
                let c = split(hist, ka, kb);
                (cell_mi(&c), c.n)
            },
        )
        .collect();
    CmifMap::new(
        domain,
        cells.iter().map(|(m, _)| m.unwrap_or(0.0)).collect(),
        cells.iter().map(|(_, n)| *n).collect(),
        cells.iter().map(|(m, _)| m.is_some()).collect(),
    )
}

/// Direct MI and overlap at a single displacement.
pub fn direct_mi_at(
    a: &LabelImage,
    ma: &Mask,
    b: &LabelImage,
    mb: &Mask,
    chi: Displacement,
) -> Result<(Option<f64>, u32)> {
    let scan = Scanner::new(a, ma, b, mb)?;
    let mut hist = vec![0u32; (scan.ka + 1) * (scan.kb + 1)];
    scan.histogram(chi, &mut hist);
    let c = split(&hist, scan.ka, scan.kb);
    Ok((cell_mi(&c), c.n))
}

/// MI of the pair at zero displacement in relative-frequency form,
/// `Σ p_ab · log2(p_ab / (p_a · p_b))`.
pub fn scalar_mi(a: &LabelImage, ma: &Mask, b: &LabelImage, mb: &Mask) -> Result<f64> {
    scalar_mi_at(a, ma, b, mb, Displacement::ZERO)
}

/// [`scalar_mi`] with B shifted by `chi`.
pub fn scalar_mi_at(
    a: &LabelImage,
    ma: &Mask,
    b: &LabelImage,
    mb: &Mask,
    chi: Displacement,
) -> Result<f64> {
    let (sa, sb) = (a.shape(), b.shape());
    let (ka, kb) = (a.k(), b.k());
    let mut joint = vec![vec![0u64; kb]; ka];
    let mut n = 0u64;
    for r in 0..sa.height() {
        for c in 0..sa.width() {
            let (rb, cb) = (r as isize + chi.row, c as isize + chi.col);
            if !sb.contains(rb, cb) || !ma.get(r, c) || !mb.get(rb as usize, cb as usize) {
                continue;
            }
            let la = a.get(r, c) as usize;
            let lb = b.get(rb as usize, cb as usize) as usize;
            if la < ka && lb < kb {
                joint[la][lb] += 1;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Degenerate("empty overlap".into()));
    }
    let n = n as f64;
    let pa: Vec<f64> = joint
        .iter()
        .map(|row| row.iter().sum::<u64>() as f64 / n)
        .collect();
    let pb: Vec<f64> = (0..kb)
        .map(|j| joint.iter().map(|row| row[j]).sum::<u64>() as f64 / n)
        .collect();
    let mut mi = 0.0;
    for (i, row) in joint.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let p = c as f64 / n;
                mi += p * (p / (pa[i] * pb[j])).log2();
            }
        }
    }
    Ok(mi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_pixel_is_deterministic() {
        let s = GridShape::square(1);
        let l = LabelImage::new(s, 2, vec![1]).unwrap();
        let m = Mask::full(s);
        let (map, fam) = direct_cmif_map(&l, &m, &l, &m).unwrap();
        assert_eq!(map.domain().len(), 1);
        assert_eq!(map.valid(), &[true]);
        assert_eq!(map.mi()[0], 0.0);
        assert_eq!(fam.joint(1, 1).counts(), &[1]);
    }

    #[test]
    fn self_pair_matches_frequency_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = GridShape::square(8);
        let a = LabelImage::from_fn(s, 2, |_, _| rng.random_range(0..2)).unwrap();
        let m = Mask::full(s);
        let (map, _) = direct_cmif_map(&a, &m, &a, &m).unwrap();
        let expected = scalar_mi(&a, &m, &a, &m).unwrap();
        assert!((map.mi_at(Displacement::ZERO).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn shifted_histogram_matches_literal_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (sa, sb) = (GridShape::new(7, 9).unwrap(), GridShape::new(5, 4).unwrap());
        let a = LabelImage::from_fn(sa, 3, |_, _| rng.random_range(0..3)).unwrap();
        let b = LabelImage::from_fn(sb, 2, |_, _| rng.random_range(0..2)).unwrap();
        let ma = Mask::from_fn(sa, |_, _| rng.random_bool(0.7));
        let mb = Mask::from_fn(sb, |_, _| rng.random_bool(0.7));
        let (map, _) = direct_cmif_map(&a, &ma, &b, &mb).unwrap();
        for chi in map.domain().iter() {
            match scalar_mi_at(&a, &ma, &b, &mb, chi) {
                Ok(mi) => assert!((map.mi_at(chi).unwrap() - mi).abs() < 1e-12),
                Err(_) => assert_eq!(map.mi_at(chi), None),
            }
        }
    }

    #[test]
    fn streaming_variant_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s = GridShape::square(6);
        let a = LabelImage::from_fn(s, 4, |_, _| rng.random_range(0..4)).unwrap();
        let m = Mask::from_fn(s, |_, _| rng.random_bool(0.8));
        let (full, _) = direct_cmif_map(&a, &m, &a, &m).unwrap();
        assert_eq!(direct_mi_map(&a, &m, &a, &m).unwrap(), full);
        let chi = Displacement::new(1, -2);
        let (mi, n) = direct_mi_at(&a, &m, &a, &m, chi).unwrap();
        assert_eq!(mi, full.mi_at(chi));
        assert_eq!(Some(n), full.n_at(chi));
    }

    #[test]
    fn checkerboard_vs_noise_is_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let s = GridShape::square(64);
        let a = LabelImage::from_fn(s, 2, |r, c| ((r + c) % 2) as u32).unwrap();
        let b = LabelImage::from_fn(s, 2, |_, _| rng.random_range(0..2)).unwrap();
        let m = Mask::full(s);
        assert!(scalar_mi(&a, &m, &b, &m).unwrap() < 0.05);
    }

    #[test]
    fn empty_overlap_is_an_error() {
        let s = GridShape::square(3);
        let a = LabelImage::new(s, 1, vec![0; 9]).unwrap();
        assert!(scalar_mi(&a, &Mask::empty(s), &a, &Mask::full(s)).is_err());
    }
}
