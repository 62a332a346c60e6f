//! Success-rate evaluation on synthetic rigid pairs.
//!
//! Each trial draws a textured scene, crops the reference from its centre,
//! resamples the floating image under a random rigid transform, applies a
//! modality simulation and impulse noise, and runs the full alignment. A
//! trial succeeds when the mean corner error is below 2% of the width.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{
    align_prepared, corner_error, AlignmentConfig, AlignmentInputs, AlignmentResult,
};
use crate::error::Result;
use crate::grid::{make_circular_mask, GridShape, IntensityImage, Mask};
use crate::quantize::KMeansParams;
use crate::synth::{impulse_noise, Modality, Scene};
use crate::transform::RigidTransform;

pub const SUCCESS_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub trials: usize,
    pub seed: u64,
    pub size: GridShape,
    /// Ground-truth angles are drawn from `±angle_range`.
    pub angle_range: f64,
    /// Ground-truth translations are drawn from `±translation_fraction · size`.
    pub translation_fraction: f64,
    pub modality: Modality,
    pub noise_rate: f64,
    pub config: AlignmentConfig,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            trials: 50,
            seed: 0,
            size: GridShape::square(256),
            angle_range: PI,
            translation_fraction: 0.1,
            modality: Modality::GammaRemap,
            noise_rate: 0.05,
            config: AlignmentConfig {
                angle_count: 100,
                kmeans: KMeansParams::ACCURACY,
                ..AlignmentConfig::default()
            },
        }
    }
}

/// One synthetic pair with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub reference: IntensityImage,
    pub reference_mask: Mask,
    pub floating: IntensityImage,
    pub floating_mask: Mask,
    /// Maps floating coordinates into reference coordinates.
    pub truth: RigidTransform,
}

pub fn synthetic_pair(params: &EvalParams, seed: u64) -> Result<SyntheticPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = params.size;
    let (h, w) = (size.height(), size.width());
    let scene = Scene::generate(GridShape::new(2 * h, 2 * w)?, rng.random());
    let (r0, c0) = (h / 2, w / 2);
    let reference = IntensityImage::new(size, 1, scene.crop(r0, c0, size))?;

    let angle = rng.random_range(-params.angle_range..=params.angle_range);
    let span = params.translation_fraction;
    let tx = rng.random_range(-span..=span) * w as f64;
    let ty = rng.random_range(-span..=span) * h as f64;
    let truth = RigidTransform {
        angle,
        translation: [tx, ty],
        center: size.center(),
    };
    let raw = scene.resample(&truth, [c0 as f64, r0 as f64], size);
    let mut values = params.modality.apply(&raw);
    let channels = params.modality.channels();
    impulse_noise(&mut values, channels, params.noise_rate, &mut rng);
    let floating = IntensityImage::new(size, channels, values)?;
    let mask = make_circular_mask(size);
    Ok(SyntheticPair {
        reference,
        reference_mask: mask.clone(),
        floating,
        floating_mask: mask,
        truth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub seed: u64,
    pub angle_true: f64,
    pub angle_est: f64,
    pub corner_error: f64,
    pub success: bool,
    pub mi_bits: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub params: EvalParams,
    pub trials: Vec<TrialOutcome>,
    pub success_rate: f64,
    pub mean_corner_error: f64,
    pub time_p50: f64,
    pub time_p90: f64,
}

/// Aligns one synthetic pair and scores it.
pub fn run_trial(
    params: &EvalParams,
    seed: u64,
) -> Result<(TrialOutcome, AlignmentResult, SyntheticPair)> {
    let pair = synthetic_pair(params, seed)?;
    let config = AlignmentConfig {
        seed,
        ..params.config
    };
    let start = Instant::now();
    let inputs = AlignmentInputs::prepare(
        &pair.reference,
        &pair.reference_mask,
        &pair.floating,
        &pair.floating_mask,
        &config,
    )?;
    let result = align_prepared(&inputs, &config)?;
    let seconds = start.elapsed().as_secs_f64();
    let err = corner_error(&pair.truth, &result.transform, params.size);
    Ok((
        TrialOutcome {
            seed,
            angle_true: pair.truth.angle,
            angle_est: result.angle,
            corner_error: err,
            success: err < SUCCESS_FRACTION * params.size.width() as f64,
            mi_bits: result.mi,
            seconds,
        },
        result,
        pair,
    ))
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

/// Runs `params.trials` trials with seeds `seed, seed + 1, …`.
pub fn run_eval(
    params: &EvalParams,
    mut progress: impl FnMut(&TrialOutcome),
) -> Result<EvalReport> {
    let mut trials = Vec::with_capacity(params.trials);
    for i in 0..params.trials {
        let (outcome, _, _) = run_trial(params, params.seed.wrapping_add(i as u64))?;
        progress(&outcome);
        trials.push(outcome);
    }
    let n = trials.len().max(1) as f64;
    let mut times: Vec<f64> = trials.iter().map(|t| t.seconds).collect();
    times.sort_by(f64::total_cmp);
    Ok(EvalReport {
        params: *params,
        success_rate: trials.iter().filter(|t| t.success).count() as f64 / n,
        mean_corner_error: trials.iter().map(|t| t.corner_error).sum::<f64>() / n,
        time_p50: percentile(&times, 0.5),
        time_p90: percentile(&times, 0.9),
        trials,
    })
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("seed,angle_true,angle_est,corner_error,success,mi_bits,seconds\n");
        for t in &self.trials {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                t.seed, t.angle_true, t.angle_est, t.corner_error, t.success, t.mi_bits, t.seconds
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_ground_truth_is_consistent() {
        let params = EvalParams {
            size: GridShape::square(48),
            modality: Modality::Identity,
            noise_rate: 0.0,
            ..EvalParams::default()
        };
        let pair = synthetic_pair(&params, 3).unwrap();
        let refv = pair.reference.data();
        let bilinear = |x: f64, y: f64| {
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            let at = |r: usize, c: usize| refv[r * 48 + c];
            (at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx) * (1.0 - fy)
                + (at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx) * fy
        };
        let mut checked = 0;
        for r in 0..48 {
            for c in 0..48 {
                let [x, y] = pair.truth.apply([c as f64, r as f64]);
                if x >= 0.0 && y >= 0.0 && x < 47.0 && y < 47.0 {
                    let v = pair.floating.data()[r * 48 + c];
                    assert!((v - bilinear(x, y)).abs() < 1e-9);
                    checked += 1;
                }
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn small_eval_runs() {
        let params = EvalParams {
            trials: 2,
            size: GridShape::square(40),
            config: AlignmentConfig {
                angle_count: 8,
                refinement_count: 2,
                k: 4,
                ..EvalParams::default().config
            },
            ..EvalParams::default()
        };
        let mut seen = 0;
        let report = run_eval(&params, |_| seen += 1).unwrap();
        assert_eq!(seen, 2);
        assert_eq!(report.trials.len(), 2);
        assert!(report.to_csv().lines().count() == 3);
    }
}
