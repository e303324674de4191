use anyprec_core::quant::{
    build_any_precision, build_channel, estimate_sensitivity_diag, kmeans_1d_weighted,
    quantize_channel, quantize_seed, upscale, ChannelQuantization,
};
use anyprec_core::{Matrix, SensitivityMap};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Weighted SSE of `values` under `assign`, each cluster around its weighted mean.
fn oracle_sse(values: &[f64], weights: &[f64], assign: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let idx: Vec<usize> = (0..values.len()).filter(|&i| assign[i] == c).collect();
        let w: f64 = idx.iter().map(|&i| weights[i]).sum();
        if w == 0.0 {
            continue;
        }
        let mean = idx.iter().map(|&i| weights[i] * values[i]).sum::<f64>() / w;
        total += idx
            .iter()
            .map(|&i| weights[i] * (values[i] - mean).powi(2))
            .sum::<f64>();
    }
    total
}

/// Minimum SSE over every split of the sorted values into `k` contiguous,
/// nonempty runs.
fn brute_force_min(values: &[f64], weights: &[f64], k: usize) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let n = values.len();
    let mut best = f64::INFINITY;
    let mut cuts = vec![0usize; k - 1];
    fn rec(
        depth: usize,
        start: usize,
        n: usize,
        cuts: &mut Vec<usize>,
        f: &mut dyn FnMut(&[usize]),
    ) {
        if depth == cuts.len() {
            f(cuts);
            return;
        }
        let remaining = cuts.len() - depth;
        for c in start..=n - remaining {
            cuts[depth] = c;
            rec(depth + 1, c + 1, n, cuts, f);
        }
    }
    let mut eval = |cuts: &[usize]| {
        let mut assign = vec![0usize; n];
        let mut cluster = 0;
        for (pos, &i) in order.iter().enumerate() {
            while cluster < cuts.len() && pos >= cuts[cluster] {
                cluster += 1;
            }
            assign[i] = cluster;
        }
        best = best.min(oracle_sse(values, weights, &assign, k));
    };
    rec(0, 1, n, &mut cuts, &mut eval);
    best
}

#[test]
fn dp_matches_exhaustive_partitions() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..300 {
        let n = rng.random_range(1..=12);
        let k = rng.random_range(1..=4.min(n));
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..2.0)).collect();
        let c = kmeans_1d_weighted(&values, &weights, k).unwrap();
        let got = oracle_sse(&values, &weights, &c.assignments, k);
        assert_eq!(got, brute_force_min(&values, &weights, k), "{values:?} k={k}");
    }
}

#[test]
fn ten_values_three_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let values: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
        let weights = vec![1.0; 10];
        let c = kmeans_1d_weighted(&values, &weights, 3).unwrap();
        assert_eq!(
            oracle_sse(&values, &weights, &c.assignments, 3),
            brute_force_min(&values, &weights, 3)
        );
    }
}

#[test]
fn assignments_are_nearest_centroid() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let n = rng.random_range(5..40);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let k = rng.random_range(1..=5);
        let c = kmeans_1d_weighted(&values, &weights, k).unwrap();
        assert!(c.centroids.windows(2).all(|w| w[0] <= w[1]));
        for (i, &a) in c.assignments.iter().enumerate() {
            let d = (values[i] - c.centroids[a]).abs();
            assert!(c.centroids.iter().all(|&m| (values[i] - m).abs() >= d));
        }
    }
}

#[test]
fn seed_sse_is_optimal_on_64_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    for _ in 0..3 {
        let row: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sens: Vec<f64> = (0..64).map(|_| rng.random_range(0.1..1.0)).collect();
        let (cq, _) = quantize_channel(&row, &sens, 2).unwrap();
        let got = oracle_sse(&row, &sens, &cq.codes().iter().map(|&c| c as usize).collect::<Vec<_>>(), 4);
        let best = brute_force_min(&row, &sens, 4);
        assert!((got - best).abs() <= 1e-12 * best, "{got} vs {best}");
    }
}

#[test]
fn upscale_split_matches_threshold_enumeration() {
    // Members [0, 0, 3]: the two thresholds give SSE 4.5 ({0}|{0,3}) and 0 ({0,0}|{3}).
    let row = [0.0, 0.0, 3.0];
    let sens = [1.0; 3];
    let cq = ChannelQuantization::from_codes(&row, &sens, &[0, 0, 0], 2, &[9.0; 4]).unwrap();
    assert_eq!(cq.cluster_sse()[0], 6.0);
    let up = upscale(&cq, &row, &sens).unwrap();
    assert_eq!(up.codes(), &[0, 0, 1]);
    assert_eq!(&up.centroids()[..2], &[0.0, 3.0]);
    assert!(up.cluster_sse()[0] + up.cluster_sse()[1] < cq.cluster_sse()[0]);
}

fn random_problem(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> (Matrix, SensitivityMap) {
    let w: Vec<f32> = (0..rows * cols).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let s: Vec<f32> = (0..rows * cols).map(|_| rng.random_range(0.0f32..2.0)).collect();
    (
        Matrix::new(rows, cols, w).unwrap(),
        SensitivityMap::new(Matrix::new(rows, cols, s).unwrap()).unwrap(),
    )
}

#[test]
fn small_build_prefix_and_monotone_sse() {
    let mut rng = ChaCha8Rng::seed_from_u64(48);
    let (w, s) = random_problem(&mut rng, 4, 8);
    let (layer, report) = build_any_precision(&w, &s, 2, 4).unwrap();
    for k in 2..4u8 {
        let lo = layer.prefix_codes(k).unwrap();
        let hi = layer.prefix_codes(k + 1).unwrap();
        for r in 0..4 {
            for c in 0..8 {
                assert_eq!(lo.get(r, c), hi.get(r, c) >> 1);
            }
        }
    }
    for r in 0..4 {
        let row: Vec<f64> = w.row(r).iter().map(|&v| v as f64).collect();
        let sens: Vec<f64> = s.values().row(r).iter().map(|&v| v as f64).collect();
        let levels = build_channel(&row, &sens, 2, 4).unwrap();
        let recomputed: Vec<f64> = levels
            .iter()
            .map(|cq| {
                cq.dequantized()
                    .iter()
                    .zip(&row)
                    .zip(&sens)
                    .map(|((q, x), s)| s * (x - q).powi(2))
                    .sum()
            })
            .collect();
        for l in 0..2 {
            assert!(recomputed[l + 1] <= recomputed[l]);
            assert!(report.sse[l + 1][r] <= report.sse[l][r]);
        }
    }
}

#[test]
fn parent_centroid_is_weighted_average_of_children() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = rng.random_range(10..300);
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let sens: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let levels = build_channel(&row, &sens, 2, 6).unwrap();
        for pair in levels.windows(2) {
            let (p, c) = (&pair[0], &pair[1]);
            let mut mass = vec![0.0; c.centroids().len()];
            for (i, &code) in c.codes().iter().enumerate() {
                mass[code as usize] += sens[i];
            }
            for b in 0..p.centroids().len() {
                let (wl, wr) = (mass[2 * b], mass[2 * b + 1]);
                if wl + wr == 0.0 {
                    assert_eq!(c.centroids()[2 * b], p.centroids()[b]);
                    continue;
                }
                let avg = (wl * c.centroids()[2 * b] + wr * c.centroids()[2 * b + 1]) / (wl + wr);
                let parent = p.centroids()[b];
                assert!((avg - parent).abs() <= 1e-9 * parent.abs().max(1e-12), "{avg} vs {parent}");
                assert!(c.centroids()[2 * b] <= c.centroids()[2 * b + 1]);
            }
        }
    }
}

#[test]
fn seed_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (w, s) = random_problem(&mut rng, 16, 300);
    let a = build_any_precision(&w, &s, 3, 6).unwrap();
    let b = build_any_precision(&w, &s, 3, 6).unwrap();
    assert_eq!(a, b);
    let (seed, _) = quantize_seed(&w, &s, 3).unwrap();
    for (r, cq) in seed.iter().enumerate() {
        assert_eq!(cq.codes(), a.0.codes().row(r).iter().map(|c| c >> 3).collect::<Vec<_>>());
    }
}

#[test]
fn sensitivity_matches_direct_mean_of_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let samples: Vec<Matrix> = (0..5)
        .map(|_| Matrix::new(3, 4, (0..12).map(|_| rng.random_range(-2.0f32..2.0)).collect()).unwrap())
        .collect();
    let est = estimate_sensitivity_diag(&samples, (3, 4)).unwrap();
    for i in 0..12 {
        let expected: f64 = samples.iter().map(|m| (m.as_slice()[i] as f64).powi(2)).sum::<f64>() / 5.0;
        assert_eq!(est.map.values().as_slice()[i], expected as f32);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn upscaling_keeps_prefix_and_lowers_sse(
        row in prop::collection::vec(-4.0f64..4.0, 1..80),
        seed in any::<u64>(),
        n_min in 2u8..5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sens: Vec<f64> = row.iter().map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.01..3.0) }).collect();
        let levels = build_channel(&row, &sens, n_min, 8).unwrap();
        for pair in levels.windows(2) {
            for (a, b) in pair[0].codes().iter().zip(pair[1].codes()) {
                prop_assert_eq!(*a, b >> 1);
            }
            prop_assert!(pair[1].sse() <= pair[0].sse());
            prop_assert!(pair[1].centroids().windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

#[test]
fn extending_a_layer_matches_building_it_directly() {
    use anyprec_core::quant::extend_any_precision;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (w, s) = random_problem(&mut rng, 8, 400);
    let (short, _) = build_any_precision(&w, &s, 2, 4).unwrap();
    let (long, long_report) = build_any_precision(&w, &s, 2, 7).unwrap();
    let (ext, report) = extend_any_precision(&short, &w, &s, 7).unwrap();
    assert_eq!(ext.codes(), long.codes());
    assert_eq!(ext.tables(), long.tables());
    for k in 2..7u8 {
        for r in 0..8 {
            assert!(report.sse_at(k + 1)[r] <= report.sse_at(k)[r]);
        }
    }
    for k in 5..=7u8 {
        assert_eq!(report.sse_at(k), long_report.sse_at(k));
    }
    assert!(extend_any_precision(&long, &w, &s, 5).is_err());
}
