#![allow(dead_code)]

use anyprec_core::quant::CentroidTable;
use anyprec_core::{AnyPrecisionLayer, CodeMatrix, Layout, PackedLayer};
use half::f16;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random parent codes with random sorted FP16 tables at every width.
pub fn random_layer(rng: &mut ChaCha8Rng, rows: usize, cols: usize, n_min: u8, n_max: u8) -> AnyPrecisionLayer {
    let codes: Vec<u8> = (0..rows * cols)
        .map(|_| rng.random_range(0..(1u32 << n_max)) as u8)
        .collect();
    let tables = (n_min..=n_max)
        .map(|k| {
            let mut values = Vec::with_capacity(rows << k);
            for _ in 0..rows {
                let mut row: Vec<f32> = (0..1usize << k).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                row.sort_by(f32::total_cmp);
                values.extend(row.into_iter().map(f16::from_f32));
            }
            CentroidTable::new(k, rows, values).unwrap()
        })
        .collect();
    AnyPrecisionLayer::new(n_min, n_max, CodeMatrix::new(rows, cols, codes).unwrap(), tables).unwrap()
}

pub fn random_packed(rng: &mut ChaCha8Rng, rows: usize, cols: usize, n_min: u8, n_max: u8) -> PackedLayer {
    PackedLayer::from_layer(&random_layer(rng, rows, cols, n_min, n_max), Layout::Permuted).unwrap()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Dense reference: codes shifted to `k` bits, looked up, multiplied in f64.
pub fn dense_reference(layer: &AnyPrecisionLayer, k: u8, x: &[f32]) -> Vec<f64> {
    let codes = layer.codes();
    let table = layer.table(k).unwrap();
    let shift = layer.n_max() - k;
    (0..layer.rows())
        .map(|r| {
            let t = table.row(r);
            codes
                .row(r)
                .iter()
                .zip(x)
                .map(|(&c, &xv)| t[(c >> shift) as usize].to_f64() * xv as f64)
                .sum()
        })
        .collect()
}

/// Per-row `Σ |w·x|`, the scale of a dot product's rounding error.
pub fn dense_abs_sum(layer: &AnyPrecisionLayer, k: u8, x: &[f32]) -> Vec<f64> {
    let codes = layer.codes();
    let table = layer.table(k).unwrap();
    let shift = layer.n_max() - k;
    (0..layer.rows())
        .map(|r| {
            let t = table.row(r);
            codes
                .row(r)
                .iter()
                .zip(x)
                .map(|(&c, &xv)| (t[(c >> shift) as usize].to_f64() * xv as f64).abs())
                .sum()
        })
        .collect()
}

/// Max absolute deviation relative to the largest reference magnitude.
pub fn max_rel_err(got: &[f32], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    got.iter()
        .zip(reference)
        .map(|(&g, &r)| (g as f64 - r).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Code of every weight in a lane, extracted bit by bit: word `b` holds code bit `b`.
pub fn naive_codes(words: &[u32]) -> [u32; 32] {
    let mut codes = [0u32; 32];
    for (i, code) in codes.iter_mut().enumerate() {
        for (b, w) in words.iter().enumerate() {
            *code |= ((w >> i) & 1) << b;
        }
    }
    codes
}

/// Reads the field of weight `i` out of transposed words of width `b`.
pub fn field_of(out: &[u32], b: usize, i: usize) -> u32 {
    let (s, g) = (i / b, i % b);
    let mask = ((1u64 << b) - 1) as u32;
    (out[g] >> (s * b)) & mask
}
