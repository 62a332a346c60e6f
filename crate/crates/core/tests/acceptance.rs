//! Acceptance suite. Each test prints one `PASS` or `FAIL` line and then
//! asserts, so `cargo test --test acceptance -- --nocapture` gives a summary.

use std::time::Instant;

use cmif::bench::{
    bench_instance, checksum, fit_slope, project_direct_time, time_direct, time_fft,
};
use cmif::eval::{run_trial, EvalParams, SyntheticPair};
use cmif::oracle::direct_mi_at;
use cmif::synth::random_labels;
use cmif::{
    cmif_map, count_families, direct_cmif_map, entropy_maps, gated_argmax, overlap_map, scalar_mi,
    swmi_map, AlignmentConfig, AlignmentInputs, AlignmentResult, Displacement, GridShape,
    LabelImage, Mask, RigidTransform, WeightMask,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: u32, name: &str, ok: bool, detail: &str) {
    println!(
        "{} criterion {id} ({name}): {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {id} ({name}) failed: {detail}");
}

fn random_shape(rng: &mut impl Rng, max: usize) -> GridShape {
    GridShape::new(rng.random_range(1..=max), rng.random_range(1..=max)).unwrap()
}

/// Full, sparse or dense random support, chosen per instance.
fn random_mask(shape: GridShape, rng: &mut impl Rng) -> Mask {
    let p: f64 = match rng.random_range(0..3) {
        0 => 1.0,
        1 => rng.random_range(0.05..0.4),
        _ => rng.random_range(0.4..1.0),
    };
    Mask::from_fn(shape, |_, _| rng.random_bool(p))
}

struct Instance {
    a: LabelImage,
    ma: Mask,
    b: LabelImage,
    mb: Mask,
}

fn instance(rng: &mut impl Rng, max: usize, ks: &[usize]) -> Instance {
    let (sa, sb) = (random_shape(rng, max), random_shape(rng, max));
    let ka = ks[rng.random_range(0..ks.len())];
    let kb = ks[rng.random_range(0..ks.len())];
    let a = random_labels(sa, ka, rng);
    let b = random_labels(sb, kb, rng);
    let ma = random_mask(sa, rng);
    let mb = random_mask(sb, rng);
    Instance { a, ma, b, mb }
}

#[test]
fn criterion_1_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let start = Instant::now();
    let (mut count_failures, mut worst_mi) = (0usize, 0.0f64);
    for _ in 0..200 {
        let Instance { a, ma, b, mb } = instance(&mut rng, 32, &[2, 4, 8]);
        let (direct, direct_counts) = direct_cmif_map(&a, &ma, &b, &mb).unwrap();
        let counts = count_families(&a, &ma, &b, &mb).unwrap();
        let map = cmif_map(&a, &ma, &b, &mb).unwrap();
        if counts != direct_counts || map.n() != direct.n() || map.valid() != direct.valid() {
            count_failures += 1;
        }
        for i in 0..map.domain().len() {
            if map.valid()[i] {
                worst_mi = worst_mi.max((map.mi()[i] - direct.mi()[i]).abs());
            }
        }
    }
    let ok = count_failures == 0 && worst_mi <= 1e-10;
    verdict(
        1,
        "oracle equivalence",
        ok,
        &format!(
            "200 instances, {count_failures} with differing counts, max |dMI| = {worst_mi:.2e} (tol 1e-10), {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_2_frequency_and_entropy_forms_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 100 {
        let Instance { a, ma, b, .. } = instance(&mut rng, 32, &[2, 3, 4, 8, 16]);
        // same shape so the zero displacement overlaps
        let b = random_labels(a.shape(), b.k(), &mut rng);
        let mb = random_mask(a.shape(), &mut rng);
        let Ok(freq) = scalar_mi(&a, &ma, &b, &mb) else {
            continue;
        };
        let (entropy, _) = direct_mi_at(&a, &ma, &b, &mb, Displacement::ZERO).unwrap();
        let streamed = cmif_map(&a, &ma, &b, &mb)
            .unwrap()
            .mi_at(Displacement::ZERO)
            .unwrap();
        worst = worst
            .max((freq - entropy.unwrap()).abs())
            .max((freq - streamed).abs());
        checked += 1;
    }
    verdict(
        2,
        "relative-frequency vs entropy form",
        worst < 1e-12,
        &format!("100 instances, max difference {worst:.2e} (tol 1e-12)"),
    );
}

#[test]
fn criterion_3_exact_translation_recovery() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let s = GridShape::square(128);
    let a = random_labels(s, 8, &mut rng);
    let m = Mask::full(s);
    let mut recovered = 0;
    let mut misses = Vec::new();
    for _ in 0..50 {
        let shift = Displacement::new(
            rng.random_range(-30i64..=30) as isize,
            rng.random_range(-30i64..=30) as isize,
        );
        let fill = random_labels(s, 8, &mut rng);
        let b = LabelImage::from_fn(s, 8, |r, c| {
            let (ra, ca) = (r as isize - shift.row, c as isize - shift.col);
            if s.contains(ra, ca) {
                a.get(ra as usize, ca as usize)
            } else {
                fill.get(r, c)
            }
        })
        .unwrap();
        let inputs = AlignmentInputs::from_labels(a.clone(), m.clone(), b, m.clone(), 0.5).unwrap();
        let r = inputs.search(&[RigidTransform::identity()]).unwrap();
        let expected = RigidTransform::from_displacement(shift);
        let corner = r.transform.apply([0.0, 0.0]);
        if r.displacement == shift && corner == expected.apply([0.0, 0.0]) {
            recovered += 1;
        } else {
            misses.push((shift, r.displacement));
        }
    }
    verdict(
        3,
        "exact translation recovery",
        recovered == 50,
        &format!("{recovered}/50 shifts recovered exactly; misses {misses:?}"),
    );
}

/// Checks a finished trial against the direct oracle: the MI at the winning
/// displacement must match a literal histogram scan, and no gated neighbour
/// may score higher.
fn oracle_check(
    params: &EvalParams,
    seed: u64,
    result: &AlignmentResult,
    pair: &SyntheticPair,
) -> (bool, String) {
    let config = AlignmentConfig {
        seed,
        ..params.config
    };
    let inputs = AlignmentInputs::prepare(
        &pair.reference,
        &pair.reference_mask,
        &pair.floating,
        &pair.floating_mask,
        &config,
    )
    .unwrap();
    let t = RigidTransform::rotation_about(result.angle, inputs.floating_center());
    let placed = RigidTransform::compose(
        &RigidTransform::translation(inputs.embed.1 as f64, inputs.embed.0 as f64),
        &t,
    );
    let (wb, wm) = cmif::warp_nn(
        &inputs.floating,
        &inputs.floating_mask,
        &placed,
        inputs.target,
    )
    .unwrap();
    let chi = Displacement::new(
        result.displacement.row - inputs.pad.0 as isize + inputs.embed.0 as isize,
        result.displacement.col - inputs.pad.1 as isize + inputs.embed.1 as isize,
    );
    let (ra, rm) = (&inputs.reference, &inputs.reference_mask);
    let (mi, n) = direct_mi_at(ra, rm, &wb, &wm, chi).unwrap();
    let max_n = overlap_map(rm, &wm).unwrap().max();
    let gate = config.gamma * max_n as f64;
    // neighbours are compared with the oracle's own value at the peak
    let peak = mi.unwrap_or(f64::NEG_INFINITY);
    let mut beaten = false;
    for dr in -1..=1 {
        for dc in -1..=1 {
            if (dr, dc) == (0, 0) {
                continue;
            }
            let nb = Displacement::new(chi.row + dr, chi.col + dc);
            if let (Some(v), n) = direct_mi_at(ra, rm, &wb, &wm, nb).unwrap() {
                beaten |= n as f64 >= gate && v > peak;
            }
        }
    }
    let matches = mi.is_some_and(|v| (v - result.mi).abs() < 1e-10) && n == result.n_at_opt;
    (
        matches && !beaten,
        format!(
            "seed {seed}: direct MI {:?} vs {:.12}, gated neighbour beats it: {beaten}",
            mi, result.mi
        ),
    )
}

#[test]
fn criterion_4_synthetic_multimodal_recovery() {
    let params = EvalParams::default();
    assert_eq!(params.config.k, 16);
    assert_eq!(
        (params.config.angle_count, params.config.refinement_count),
        (100, 32)
    );
    assert_eq!(params.config.gamma, 0.5);
    let threshold = cmif::eval::SUCCESS_FRACTION * params.size.width() as f64;

    let mut prevalidated = true;
    let start = Instant::now();
    let mut successes = 0;
    let mut errors = Vec::new();
    for i in 0..params.trials as u64 {
        let (o, result, pair) = run_trial(&params, params.seed + i).unwrap();
        if i < 5 {
            let (ok, line) = oracle_check(&params, o.seed, &result, &pair);
            println!("  oracle pre-validation {line}");
            prevalidated &= ok && o.success;
        }
        successes += o.success as usize;
        errors.push(o.corner_error);
        println!(
            "  trial {i}: angle {:+.4} est {:+.4} corner error {:.2} px ({})",
            o.angle_true,
            o.angle_est,
            o.corner_error,
            if o.success { "ok" } else { "miss" }
        );
    }
    let rate = successes as f64 / params.trials as f64;
    verdict(
        4,
        "synthetic multimodal recovery",
        prevalidated && rate >= 0.9,
        &format!(
            "{successes}/{} trials under {threshold:.2} px (rate {rate:.2}, need 0.90); oracle pre-validation {}; {:.0}s",
            params.trials,
            if prevalidated { "passed" } else { "failed" },
            start.elapsed().as_secs_f64()
        ),
    );
}

/// Fastest of three runs, to damp scheduler noise.
fn fft_seconds(a: &LabelImage, ma: &Mask, b: &LabelImage, mb: &Mask) -> (f64, u64) {
    let mut best = f64::INFINITY;
    let mut sum = 0;
    for _ in 0..3 {
        let (map, secs, _) = time_fft(a, ma, b, mb).unwrap();
        best = best.min(secs);
        sum = checksum(&map);
    }
    (best, sum)
}

#[test]
fn criterion_5_speedup() {
    const BUDGET: f64 = 600.0;
    let (a, ma, b, mb) = bench_instance(512, 8, 5).unwrap();
    let (fft, fft_sum) = fft_seconds(&a, &ma, &b, &mb);
    let (direct_map, direct) = time_direct(&a, &ma, &b, &mb).unwrap();
    let same = checksum(&direct_map) == fft_sum;
    let speedup = direct / fft;
    let ok_512 = same && speedup >= 10.0;

    let projected = project_direct_time(512, direct, 1024);
    let (ok_1024, detail_1024) = if projected > BUDGET {
        (
            true,
            format!("1024: direct budget-exceeded (projected {projected:.0}s > {BUDGET:.0}s)"),
        )
    } else {
        let (a, ma, b, mb) = bench_instance(1024, 8, 5).unwrap();
        let (fft, fft_sum) = fft_seconds(&a, &ma, &b, &mb);
        let (map, direct) = time_direct(&a, &ma, &b, &mb).unwrap();
        let s = direct / fft;
        (
            checksum(&map) == fft_sum && (s >= 50.0 || direct > BUDGET),
            format!("1024: speedup {s:.1}x (direct {direct:.1}s, fft {fft:.2}s)"),
        )
    };
    verdict(
        5,
        "speedup over direct",
        ok_512 && ok_1024,
        &format!(
            "512/256 k=8: speedup {speedup:.1}x (direct {direct:.1}s, fft {fft:.3}s, checksums {}); {detail_1024}",
            if same { "equal" } else { "DIFFER" }
        ),
    );
}

#[test]
fn criterion_6_scaling_with_k() {
    let ks = [2usize, 4, 8, 16, 32];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut line = String::new();
    for &k in &ks {
        let (a, ma, b, mb) = bench_instance(256, k, 6).unwrap();
        let (secs, _) = fft_seconds(&a, &ma, &b, &mb);
        xs.push(((1 + 2 * k + k * k) as f64).ln());
        ys.push(secs.ln());
        line.push_str(&format!(" k={k}:{secs:.3}s"));
    }
    let slope = fit_slope(&xs, &ys);
    verdict(
        6,
        "scaling with transform count",
        (0.5..=2.0).contains(&slope),
        &format!("slope of log t vs log(1+2k+k^2) = {slope:.3} (need [0.5, 2]);{line}"),
    );
}

#[test]
fn criterion_7_unit_weights_match_binary_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst = 0.0f64;
    let mut validity_differs = 0;
    for _ in 0..50 {
        let Instance { a, ma, b, mb } = instance(&mut rng, 24, &[2, 4, 8]);
        let binary = cmif_map(&a, &ma, &b, &mb).unwrap();
        let weighted = swmi_map(
            &a,
            &WeightMask::from_mask(&ma),
            &b,
            &WeightMask::from_mask(&mb),
        )
        .unwrap();
        for i in 0..binary.domain().len() {
            if binary.valid()[i] != weighted.valid()[i] {
                validity_differs += 1;
            } else if binary.valid()[i] {
                worst = worst.max((binary.mi()[i] - weighted.mi()[i]).abs());
            }
        }
    }
    verdict(
        7,
        "weighted MI with unit weights",
        validity_differs == 0 && worst <= 1e-9,
        &format!("50 instances, max |dMI| = {worst:.2e} (tol 1e-9), validity mismatches {validity_differs}"),
    );
}

fn labels_strategy(max: usize, kmax: usize) -> impl Strategy<Value = (LabelImage, Mask)> {
    (1..=max, 1..=max, 1..=kmax).prop_flat_map(|(h, w, k)| {
        (
            proptest::collection::vec(0..k as u32, h * w),
            proptest::collection::vec(proptest::bool::weighted(0.8), h * w),
        )
            .prop_map(move |(l, m)| {
                let s = GridShape::new(h, w).unwrap();
                (LabelImage::new(s, k, l).unwrap(), Mask::new(s, m).unwrap())
            })
    })
}

fn pair_strategy() -> impl Strategy<Value = ((LabelImage, Mask), (LabelImage, Mask))> {
    (labels_strategy(12, 5), labels_strategy(12, 5))
}

fn run_property<S: Strategy>(
    name: &str,
    strategy: S,
    check: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: 128,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, check)
        .map_err(|e| format!("{name}: {e}"))
}

#[test]
fn criterion_8_property_suite() {
    let mut failures = Vec::new();
    let mut record = |r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(e);
        }
    };

    record(run_property(
        "mi bounds",
        pair_strategy(),
        |((a, ma), (b, mb))| {
            let ent = entropy_maps(&count_families(&a, &ma, &b, &mb).unwrap()).unwrap();
            let map = cmif_map(&a, &ma, &b, &mb).unwrap();
            for i in 0..map.domain().len() {
                if map.valid()[i] {
                    let mi = map.mi()[i];
                    prop_assert!(mi >= -1e-12, "negative MI {}", mi);
                    prop_assert!(mi <= ent.h_a[i].min(ent.h_b[i]) + 1e-12);
                }
            }
            Ok(())
        },
    ));

    record(run_property(
        "marginal sums",
        pair_strategy(),
        |((a, ma), (b, mb))| {
            let f = count_families(&a, &ma, &b, &mb).unwrap();
            let len = f.domain.len();
            for i in 0..len {
                let n = f.overlap.counts()[i];
                let mut total_a = 0;
                for la in 0..f.k_a {
                    let row: u32 = (0..f.k_b).map(|lb| f.joint(la, lb).counts()[i]).sum();
                    prop_assert_eq!(row, f.marginal_a[la].counts()[i]);
                    total_a += row;
                }
                for lb in 0..f.k_b {
                    let col: u32 = (0..f.k_a).map(|la| f.joint(la, lb).counts()[i]).sum();
                    prop_assert_eq!(col, f.marginal_b[lb].counts()[i]);
                }
                prop_assert_eq!(total_a, n);
            }
            Ok(())
        },
    ));

    record(run_property(
        "label permutation invariance",
        (pair_strategy(), any::<u64>()),
        |(((a, ma), (b, mb)), seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut perm = |k: usize| {
                let mut p: Vec<u32> = (0..k as u32).collect();
                for i in (1..k).rev() {
                    p.swap(i, rng.random_range(0..=i));
                }
                p
            };
            let (pa, pb) = (perm(a.k()), perm(b.k()));
            let base = cmif_map(&a, &ma, &b, &mb).unwrap();
            let permuted =
                cmif_map(&a.relabel(&pa).unwrap(), &ma, &b.relabel(&pb).unwrap(), &mb).unwrap();
            prop_assert_eq!(base.n(), permuted.n());
            prop_assert_eq!(base.valid(), permuted.valid());
            for (x, y) in base.mi().iter().zip(permuted.mi()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            Ok(())
        },
    ));

    record(run_property(
        "gate monotonicity",
        (pair_strategy(), 0.0..=1.0f64, 0.0..=1.0f64),
        |(((a, ma), (b, mb)), g1, g2)| {
            let map = cmif_map(&a, &ma, &b, &mb).unwrap();
            if map.valid_count() == 0 {
                return Ok(());
            }
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            let loose = gated_argmax(&map, lo).unwrap().1;
            let tight = gated_argmax(&map, hi).unwrap().1;
            prop_assert!(tight <= loose);
            Ok(())
        },
    ));

    record(run_property(
        "determinism",
        (pair_strategy(), any::<u64>()),
        |(((a, ma), (b, mb)), seed)| {
            let first = cmif_map(&a, &ma, &b, &mb).unwrap();
            let second = cmif_map(&a, &ma, &b, &mb).unwrap();
            prop_assert_eq!(&first, &second);
            if a.shape() == b.shape() && a.k() > 1 {
                let run = || {
                    let inputs = AlignmentInputs::from_labels(
                        a.clone(),
                        ma.clone(),
                        b.clone(),
                        mb.clone(),
                        0.5,
                    )
                    .unwrap();
                    let grid = inputs.search(&cmif::make_angle_grid(6, inputs.floating_center()));
                    grid.and_then(|g| cmif::refine(&g, 6, 4, seed, &inputs))
                };
                match (run(), run()) {
                    (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
                    (Err(_), Err(_)) => {}
                    _ => prop_assert!(false, "runs disagree on success"),
                }
            }
            Ok(())
        },
    ));

    verdict(
        8,
        "property suite",
        failures.is_empty(),
        &if failures.is_empty() {
            "5 properties x 128 cases each".to_string()
        } else {
            failures.join("; ")
        },
    );
}
