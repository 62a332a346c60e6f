//! Timing sweeps comparing the frequency-domain and direct CMIF methods.

use std::fmt;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmif::{cmif_map_with_stats, CmifMap};
use crate::error::{Error, Result};
use crate::grid::{GridShape, LabelImage, Mask};
use crate::oracle::direct_mi_map;
use crate::synth::random_labels;
use crate::xcorr::padded_extent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fft,
    Direct,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Fft => "fft",
            Method::Direct => "direct",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fft" => Ok(Method::Fft),
            "direct" => Ok(Method::Direct),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchStatus {
    Ran,
    /// Projected time exceeds the budget; `wall_time` holds the projection.
    BudgetExceeded,
    /// Estimated working memory exceeds the cap.
    MemoryCapped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: Method,
    pub ref_size: usize,
    pub float_size: usize,
    pub k: usize,
    /// Seconds; projected rather than measured unless `status` is `Ran`.
    pub wall_time: f64,
    pub transforms_count: usize,
    pub checksum: Option<u64>,
    pub status: BenchStatus,
}

impl BenchRecord {
    pub const CSV_HEADER: &'static str =
        "method,ref_size,float_size,k,wall_time,transforms_count,checksum,status";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{},{},{}",
            self.method,
            self.ref_size,
            self.float_size,
            self.k,
            self.wall_time,
            self.transforms_count,
            self.checksum
                .map(|c| format!("{c:016x}"))
                .unwrap_or_default(),
            match self.status {
                BenchStatus::Ran => "ran",
                BenchStatus::BudgetExceeded => "budget-exceeded",
                BenchStatus::MemoryCapped => "memory-capped",
            }
        )
    }
}

pub fn records_to_csv(records: &[BenchRecord]) -> String {
    let mut s = String::from(BenchRecord::CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Random labels, reference `size × size`, floating half that, full masks.
pub fn bench_instance(
    size: usize,
    k: usize,
    seed: u64,
) -> Result<(LabelImage, Mask, LabelImage, Mask)> {
    if size < 2 {
        return Err(Error::InvalidArgument(format!(
            "bench size {size} too small"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sa, sb) = (GridShape::square(size), GridShape::square(size / 2));
    Ok((
        random_labels(sa, k, &mut rng),
        Mask::full(sa),
        random_labels(sb, k, &mut rng),
        Mask::full(sb),
    ))
}

/// FNV-1a over `(N, validity, MI rounded to 1e-4)` of every cell.
pub fn checksum<N: Copy + Into<f64>>(map: &CmifMap<N>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for i in 0..map.domain().len() {
        let n: f64 = map.n()[i].into();
        feed(&(n as u64).to_le_bytes());
        feed(&[map.valid()[i] as u8]);
        let mi = if map.valid()[i] {
            (map.mi()[i] * 1e4).round() as i64
        } else {
            0
        };
        feed(&mi.to_le_bytes());
    }
    h
}

/// Direct-method time at `size` extrapolated from a run at `from_size`.
/// Every displacement scans its overlap, so work grows with the product of
/// the two image areas.
pub fn project_direct_time(from_size: usize, from_time: f64, size: usize) -> f64 {
    from_time * (size as f64 / from_size as f64).powi(4)
}

/// Rough peak working set of one frequency-domain map, in bytes.
pub fn fft_memory_estimate(size: usize, k: usize) -> usize {
    let ext = padded_extent(GridShape::square(size), GridShape::square(size / 2));
    let spectrum = (ext.width() / 2 + 1) * ext.height() * 16;
    let cells = (size + size / 2 - 1).pow(2);
    (k + 4) * spectrum + cells * 8 * 5
}

/// Timed frequency-domain map: `(map, seconds, transform count)`.
pub fn time_fft(
    a: &LabelImage,
    ma: &Mask,
    b: &LabelImage,
    mb: &Mask,
) -> Result<(CmifMap<u32>, f64, usize)> {
    let start = Instant::now();
    let (map, stats) = cmif_map_with_stats(a, ma, b, mb)?;
    Ok((
        map,
        start.elapsed().as_secs_f64(),
        stats.forward + stats.inverse,
    ))
}

/// Timed direct map: `(map, seconds)`.
pub fn time_direct(
    a: &LabelImage,
    ma: &Mask,
    b: &LabelImage,
    mb: &Mask,
) -> Result<(CmifMap<u32>, f64)> {
    let start = Instant::now();
    let map = direct_mi_map(a, ma, b, mb)?;
    Ok((map, start.elapsed().as_secs_f64()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    pub ks: Vec<usize>,
    pub methods: Vec<Method>,
    /// Seconds allowed for one direct-method map.
    pub budget: f64,
    pub memory_cap: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sizes: vec![128, 256, 512],
            ks: vec![2, 4, 8, 16],
            methods: vec![Method::Fft, Method::Direct],
            budget: 600.0,
            memory_cap: 2 << 30,
            seed: 0,
        }
    }
}

/// Runs every `(size, k, method)` combination. Fails if both methods ran on
/// an instance and their checksums differ.
pub fn sweep(
    config: &SweepConfig,
    mut progress: impl FnMut(&BenchRecord),
) -> Result<Vec<BenchRecord>> {
    let mut records = Vec::new();
    // last direct timing per k: (size, seconds)
    let mut direct_prev: Vec<Option<(usize, f64)>> = vec![None; config.ks.len()];
    for &size in &config.sizes {
        for (ki, &k) in config.ks.iter().enumerate() {
            let (a, ma, b, mb) = bench_instance(size, k, config.seed)?;
            let mut sums = Vec::new();
            for &method in &config.methods {
                let base = BenchRecord {
                    method,
                    ref_size: size,
                    float_size: size / 2,
                    k,
                    wall_time: 0.0,
                    transforms_count: 0,
                    checksum: None,
                    status: BenchStatus::Ran,
                };
                let record = match method {
                    Method::Fft if fft_memory_estimate(size, k) > config.memory_cap => {
                        BenchRecord {
                            status: BenchStatus::MemoryCapped,
                            ..base
                        }
                    }
                    Method::Fft => {
                        let (map, secs, transforms) = time_fft(&a, &ma, &b, &mb)?;
                        BenchRecord {
                            wall_time: secs,
                            transforms_count: transforms,
                            checksum: Some(checksum(&map)),
                            ..base
                        }
                    }
                    Method::Direct => {
                        let projected =
                            direct_prev[ki].map(|(s, t)| project_direct_time(s, t, size));
                        match projected {
                            Some(p) if p > config.budget => {
                                direct_prev[ki] = Some((size, p));
                                BenchRecord {
                                    wall_time: p,
                                    status: BenchStatus::BudgetExceeded,
                                    ..base
                                }
                            }
                            _ => {
                                let (map, secs) = time_direct(&a, &ma, &b, &mb)?;
                                direct_prev[ki] = Some((size, secs));
                                BenchRecord {
                                    wall_time: secs,
                                    checksum: Some(checksum(&map)),
                                    ..base
                                }
                            }
                        }
                    }
                };
                if let Some(c) = record.checksum {
                    sums.push(c);
                }
                progress(&record);
                records.push(record);
            }
            if sums.windows(2).any(|w| w[0] != w[1]) {
                return Err(Error::ChecksumMismatch { size, k });
            }
        }
    }
    Ok(records)
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn methods_agree_on_small_instance() {
        let config = SweepConfig {
            sizes: vec![32],
            ks: vec![4],
            ..SweepConfig::default()
        };
        let recs = sweep(&config, |_| {}).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs
            .iter()
            .all(|r| r.status == BenchStatus::Ran && r.wall_time > 0.0));
        assert_eq!(recs[0].checksum, recs[1].checksum);
        assert_eq!(recs[0].transforms_count, (4 + 4 + 2) + (16 + 1));
    }

    #[test]
    fn budget_projection_skips_direct() {
        let config = SweepConfig {
            sizes: vec![16, 64],
            ks: vec![2],
            methods: vec![Method::Direct],
            budget: 1e-9,
            ..SweepConfig::default()
        };
        let recs = sweep(&config, |_| {}).unwrap();
        assert_eq!(recs[0].status, BenchStatus::Ran);
        assert_eq!(recs[1].status, BenchStatus::BudgetExceeded);
        assert!((recs[1].wall_time / recs[0].wall_time - 256.0).abs() < 1e-6);
    }

    #[test]
    fn memory_cap_skips_fft() {
        let config = SweepConfig {
            sizes: vec![16],
            ks: vec![2],
            methods: vec![Method::Fft],
            memory_cap: 10,
            ..SweepConfig::default()
        };
        assert_eq!(
            sweep(&config, |_| {}).unwrap()[0].status,
            BenchStatus::MemoryCapped
        );
    }

    #[test]
    fn csv_layout() {
        let r = BenchRecord {
            method: Method::Direct,
            ref_size: 8,
            float_size: 4,
            k: 2,
            wall_time: 0.5,
            transforms_count: 0,
            checksum: None,
            status: BenchStatus::BudgetExceeded,
        };
        let csv = records_to_csv(&[r]);
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "direct,8,4,2,0.500000,0,,budget-exceeded"
        );
    }

    #[test]
    fn slope_of_line() {
        assert!((fit_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-12);
    }
}
