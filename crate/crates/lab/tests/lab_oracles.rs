use anyprec_lab::awq::{activation_scales, candidate_row_loss, clip_ratios, reused_upscale, scale_exponents};
use anyprec_lab::gptq::weighted_error;
use anyprec_lab::rtn::row_params;
use anyprec_lab::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

#[test]
fn rtn_error_is_within_half_a_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = gaussian(&mut rng, 16, 200);
    for bits in 2..=6 {
        let params = row_params(&w, bits).unwrap();
        let out = rtn_quantize(&w, &params).unwrap();
        for r in 0..16 {
            for c in 0..200 {
                let err = (w[(r, c)] - out.dequant[(r, c)]).abs();
                assert!(err <= params[r].scale / 2.0 * (1.0 + 1e-12));
            }
        }
    }
}

#[test]
fn rtn_upscale_keeps_prefix_and_halves_the_error_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = gaussian(&mut rng, 8, 500);
    let params = row_params(&w, 3).unwrap();
    let base = rtn_quantize(&w, &params).unwrap();
    let (mut codes, mut grid) = (base.codes.clone(), params.clone());
    let mut mse = (base.dequant.clone() - &w).norm_squared();
    for _ in 0..4 {
        let (up, up_grid) = rtn_upscale(&w, &codes, &grid).unwrap();
        assert!(up.iter().zip(codes.iter()).all(|(&n, &o)| n >> 1 == o));
        let deq = anyprec_lab::rtn::dequantize(&up, &up_grid);
        for r in 0..8 {
            for c in 0..500 {
                let err = (w[(r, c)] - deq[(r, c)]).abs();
                assert!(err <= up_grid[r].scale / 2.0 * (1.0 + 1e-12));
            }
        }
        let new_mse = (deq - &w).norm_squared();
        assert!(new_mse <= mse);
        mse = new_mse;
        codes = up;
        grid = up_grid;
    }
}

#[test]
fn per_weight_error_can_grow_near_the_bin_representative() {
    // A weight close to its bin's representative is pushed a quarter step
    // away by the split, so the per-weight error is not monotone.
    let p = UniformQuantParams::new(1.0, 0.0, 2).unwrap();
    let w = DMatrix::from_row_slice(1, 1, &[1.05]);
    let base = rtn_quantize(&w, &[p]).unwrap();
    let (up, grid) = rtn_upscale(&w, &base.codes, &[p]).unwrap();
    let before = (w[(0, 0)] - base.dequant[(0, 0)]).abs();
    let after = (w[(0, 0)] - grid[0].value(up[(0, 0)])).abs();
    assert!((before - 0.05).abs() < 1e-12);
    assert!((after - 0.20).abs() < 1e-12);
}

#[test]
fn awq_no_worse_than_plain_rtn() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = gaussian(&mut rng, 6, 24);
    let x = gaussian(&mut rng, 64, 24);
    let obj = Objective::from_calibration(&x).unwrap();
    for bits in 2..=4 {
        let r = awq_like_preprocess(&w, &x, bits).unwrap();
        let plain = rtn_quantize(&w, &row_params(&w, bits).unwrap()).unwrap();
        assert!(r.loss <= obj.loss(&w, &plain.dequant) * (1.0 + 1e-12));
        let recomputed = obj.loss(&w, &r.effective().unwrap());
        assert!((recomputed - r.loss).abs() <= 1e-9 * r.loss.max(1e-30));
    }
}

#[test]
fn awq_matches_exhaustive_joint_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..3 {
        let w = gaussian(&mut rng, 2, 6);
        let x = gaussian(&mut rng, 16, 6);
        let obj = Objective::from_calibration(&x).unwrap();
        let got = awq_like_preprocess(&w, &x, 2).unwrap();
        // Every (alpha, clip_row0, clip_row1) triple.
        let mut best = f64::INFINITY;
        for alpha in scale_exponents() {
            let s = activation_scales(&x, alpha);
            for &r0 in &clip_ratios() {
                let l0 = candidate_row_loss(&w, 0, &obj, &s, r0, 2).unwrap();
                for &r1 in &clip_ratios() {
                    best = best.min(l0 + candidate_row_loss(&w, 1, &obj, &s, r1, 2).unwrap());
                }
            }
        }
        assert_eq!(got.loss, best);
    }
}

#[test]
fn reused_preprocessing_is_worse_than_direct_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = gaussian(&mut rng, 16, 32);
    let x = gaussian(&mut rng, 256, 32);
    let obj = Objective::from_calibration(&x).unwrap();
    let seed = awq_like_preprocess(&w, &x, 3).unwrap();
    for (bits, eff) in (4..=6).zip(reused_upscale(&seed, 3).unwrap()) {
        let direct = awq_like_preprocess(&w, &x, bits).unwrap();
        assert!(obj.loss(&w, &eff) >= direct.loss, "bits {bits}");
    }
}

#[test]
fn representable_weights_need_no_clamping() {
    // Values on the split 3-bit grid of a 2-bit grid (zero 0, scale 1).
    let p = UniformQuantParams::new(1.0, 0.0, 2).unwrap();
    let split = p.split().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let codes4 = DMatrix::from_fn(5, 12, |_, _| rng.random_range(0..8u32));
    let w = DMatrix::from_fn(5, 12, |r, c| split.value(codes4[(r, c)]));
    let base = GptqOutput {
        codes: codes4.map(|c| c >> 1),
        params: vec![p; 5],
        dequant: DMatrix::zeros(5, 12),
        trace: LabTrace::default(),
    };
    let x = gaussian(&mut rng, 40, 12);
    let h = x.tr_mul(&x);
    let up = gptq_upscale_clamped(&w, &base, &h).unwrap();
    assert_eq!(up.codes, codes4);
    assert_eq!(up.dequant, w);
    assert!(up.trace.mean_clamp.iter().all(|&c| c == 0.0));
}

#[test]
fn correlated_upscale_clamps_late_and_loses_to_direct() {
    let cfg = SyntheticConfig {
        seed: 11,
        rows: 64,
        cols: 64,
        samples: 2048,
        correlation: 0.9,
        ..Default::default()
    };
    let p = synthetic_problem(&cfg).unwrap();
    let base = gptq_quantize(&p.weights, &p.hessian, 3).unwrap();
    let up = gptq_upscale_clamped(&p.weights, &base, &p.hessian).unwrap();
    let direct = gptq_quantize(&p.weights, &p.hessian, 4).unwrap();
    let late = &up.trace.mean_clamp[48..];
    assert!(late.iter().sum::<f64>() > 0.0);
    assert!(direct.trace.mean_clamp.iter().all(|&c| c == 0.0));
    assert!(
        weighted_error(&p.weights, &up.dequant, &p.hessian)
            > weighted_error(&p.weights, &direct.dequant, &p.hessian)
    );
}

#[test]
fn lab_is_deterministic_and_correlation_drives_divergence() {
    let small = |correlation| LabConfig {
        problem: SyntheticConfig {
            rows: 32,
            cols: 64,
            samples: 4096,
            correlation,
            ..Default::default()
        },
        seed_bits: 3,
        max_bits: 4,
    };
    let a = run_lab(&small(0.9)).unwrap();
    assert_eq!(a, run_lab(&small(0.9)).unwrap());
    let calm = run_lab(&small(0.0)).unwrap();
    assert!(calm.clamped.rmsd.last() < a.clamped.rmsd.last());
}

#[test]
fn non_pd_hessian_errors() {
    let w = DMatrix::from_element(2, 3, 0.5);
    let err = gptq_quantize(&w, &DMatrix::zeros(3, 3), 3).unwrap_err();
    assert!(matches!(err, LabError::NotPositiveDefinite { .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn clamped_codes_stay_in_window(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..20, bits in 2u8..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = gaussian(&mut rng, rows, cols);
        let x = gaussian(&mut rng, 3 * cols, cols);
        let h = x.tr_mul(&x);
        let base = gptq_quantize(&w, &h, bits).unwrap();
        let up = gptq_upscale_clamped(&w, &base, &h).unwrap();
        for (n, o) in up.codes.iter().zip(base.codes.iter()) {
            prop_assert!(*n >= 2 * o && *n <= 2 * o + 1);
        }
    }

    #[test]
    fn rtn_upscale_prefix(seed in any::<u64>(), bits in 1u8..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = gaussian(&mut rng, 3, 40);
        let params = row_params(&w, bits).unwrap();
        let base = rtn_quantize(&w, &params).unwrap();
        let (up, _) = rtn_upscale(&w, &base.codes, &params).unwrap();
        prop_assert!(up.iter().zip(base.codes.iter()).all(|(&n, &o)| n >> 1 == o));
    }
}
