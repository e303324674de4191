//! Bitplane matrix-vector and small-batch matrix-matrix kernels.
//!
//! The CPU engine follows the per-lane pipeline of the GPU design. For each
//! 1024-weight tile and each of its 32 lanes:
//!
//! 1. load one 32-bit word from each of the `k` most significant planes
//!    together with the 32 activations the lane covers;
//! 2. bit-transpose the words so each weight's code bits are contiguous;
//! 3. shift and mask out the centroid indices (two 3-bit indices at a time
//!    through the merged pair table when `k = 3`);
//! 4. look the centroids up in the row's table;
//! 5. multiply-accumulate against the activations in FP32.
//!
//! Activations are gathered into lane order once per call, which is what the
//! permuted plane layout buys on a GPU: lane `t` of a tile reads the
//! activations its word covers without strided access.
//!
//! Accumulation order is fixed (lane sums, then tile sums, then the row), so
//! results are deterministic and independent of thread count.

mod table;
mod transpose;

pub use table::{build_merged_table, merge_index, MergedTable3};
pub use transpose::{
    bit_transpose, lane_width, op_count, transpose_any_width, transpose_block, SUPPORTED_WIDTHS,
};

use rayon::prelude::*;

use crate::codec::{Layout, PackedLayer, LANES, TILE_BYTES, TILE_WEIGHTS};
use crate::error::{Error, Result};
use crate::Matrix;

/// Batch size above which [`gemm`] dequantizes once and multiplies densely.
pub const DEFAULT_DENSE_THRESHOLD: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GemvConfig {
    /// Bit-width `k` of the model to run.
    pub bit_width: u8,
    /// Largest batch served by the bitplane path.
    pub dense_threshold: usize,
    /// Use the merged pair table for 3-bit codes.
    pub merge_tables: bool,
    /// Round activations to FP16 on load; accumulation stays FP32.
    pub half_activations: bool,
}

impl GemvConfig {
    pub fn new(bit_width: u8) -> Self {
        Self {
            bit_width,
            dense_threshold: DEFAULT_DENSE_THRESHOLD,
            merge_tables: true,
            half_activations: false,
        }
    }

    fn check(&self, layer: &PackedLayer) -> Result<()> {
        if !layer.supports(self.bit_width) {
            return Err(Error::Parameter(format!(
                "bit-width {} not in {}..={}",
                self.bit_width,
                layer.n_min(),
                layer.n_max()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelPath {
    /// Bitplane path with shift-and-mask lookups.
    Bitplane,
    /// Bitplane path with merged 3-bit pair lookups.
    MergedTable3,
    /// Dequantize once, then dense multiply.
    Dense,
}

impl std::fmt::Display for KernelPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KernelPath::Bitplane => "bitplane",
            KernelPath::MergedTable3 => "merged3",
            KernelPath::Dense => "dense",
        })
    }
}

/// Memory traffic and dispatch decision of one kernel call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecReport {
    /// Bitplane bytes loaded, counted at every word load.
    pub planes_bytes_read: u64,
    /// Centroid table bytes loaded (FP16 entries).
    pub table_bytes_read: u64,
    pub path: KernelPath,
}

impl ExecReport {
    pub fn total_bytes(&self) -> u64 {
        self.planes_bytes_read + self.table_bytes_read
    }
}

/// Per-row lookup state: the row's centroids widened to FP32, plus the pair
/// table when the merged path is active.
struct RowTable {
    centroids: Vec<f32>,
    merged: Option<MergedTable3>,
}

impl RowTable {
    fn load(layer: &PackedLayer, k: u8, row: usize, merge: bool) -> Result<Self> {
        let centroids: Vec<f32> = layer.table(k)?.row(row).iter().map(|c| c.to_f32()).collect();
        let merged = if merge && k == 3 {
            Some(build_merged_table(&centroids)?)
        } else {
            None
        };
        Ok(Self { centroids, merged })
    }

    fn bytes(&self) -> u64 {
        (self.centroids.len() * 2) as u64
    }
}

/// Steps 2-4 for one lane: `planes[p]` is the word of plane `p` (MSB first).
/// Writes the dequantized weight of lane bit `i` to `out[i]`.
#[inline(always)]
fn decode_lane_b<const B: usize>(planes: &[u32], table: &RowTable, out: &mut [f32; 32]) {
    let k = planes.len();
    let mut words = [0u32; B];
    for (b, w) in words.iter_mut().take(k).enumerate() {
        *w = planes[k - 1 - b];
    }
    let t = transpose_block(words);
    if let Some(merged) = &table.merged {
        // B = 4: eight zero-extended 3-bit codes per word, merged two at a time.
        for (g, &word) in t.iter().enumerate() {
            for p in 0..4 {
                let v = word >> (8 * p);
                let (a, b) = merged.lookup(merge_index((v & 7) as u8, ((v >> 4) & 7) as u8));
                out[8 * p + g] = a;
                out[8 * p + 4 + g] = b;
            }
        }
        return;
    }
    let mask = ((1u64 << B) - 1) as u32;
    for (g, &word) in t.iter().enumerate() {
        for s in 0..32 / B {
            out[s * B + g] = table.centroids[((word >> (s * B)) & mask) as usize];
        }
    }
}

#[inline(always)]
fn decode_lane(planes: &[u32], table: &RowTable, out: &mut [f32; 32]) {
    match planes.len() {
        2 => decode_lane_b::<2>(planes, table, out),
        3 | 4 => decode_lane_b::<4>(planes, table, out),
        _ => decode_lane_b::<8>(planes, table, out),
    }
}

/// Step 1 for one lane: the lane's word from each of the first `k` planes.
#[inline(always)]
fn load_lane(planes: &[Vec<u8>], offset: usize, words: &mut [u32; 8]) {
    for (w, plane) in words.iter_mut().zip(planes) {
        *w = u32::from_le_bytes(plane[offset..offset + 4].try_into().expect("4 bytes"));
    }
}

/// Activations rearranged so that lane `t` of tile `n` finds the value for
/// its word bit `i` at `n·1024 + t·32 + i`. Padding columns are zero.
fn gather_lanes(x: &[f32], padded_cols: usize, layout: Layout) -> Vec<f32> {
    let mut out = vec![0.0f32; padded_cols];
    for (tile, chunk) in out.chunks_exact_mut(TILE_WEIGHTS).enumerate() {
        let base = tile * TILE_WEIGHTS;
        for lane in 0..LANES {
            for bit in 0..32 {
                let col = base + layout.weight_in_tile(lane, bit);
                if col < x.len() {
                    chunk[lane * 32 + bit] = x[col];
                }
            }
        }
    }
    out
}

/// Bitplane path for one output row against every activation vector in
/// `xs` (already in lane order). Returns the plane bytes loaded.
fn row_products(
    layer: &PackedLayer,
    k: u8,
    row: usize,
    table: &RowTable,
    xs: &[Vec<f32>],
    out: &mut [f32],
) -> u64 {
    let planes = layer.planes();
    let prefix = planes.prefix(k).expect("bit-width validated");
    let row_base = row * planes.row_bytes();
    let tiles = planes.padded_cols() / TILE_WEIGHTS;
    let m = xs.len();

    let mut words = [0u32; 8];
    let mut w = [0.0f32; 32];
    let mut acc = vec![0.0f32; m];
    let mut tile_acc = vec![0.0f32; m];
    let mut bytes = 0u64;
    for tile in 0..tiles {
        tile_acc.iter_mut().for_each(|v| *v = 0.0);
        for lane in 0..LANES {
            load_lane(prefix, row_base + tile * TILE_BYTES + 4 * lane, &mut words);
            bytes += 4 * k as u64;
            decode_lane(&words[..k as usize], table, &mut w);
            let at = tile * TILE_WEIGHTS + lane * 32;
            for (ta, x) in tile_acc.iter_mut().zip(xs) {
                let xl = &x[at..at + 32];
                let mut lane_acc = 0.0f32;
                for i in 0..32 {
                    lane_acc += w[i] * xl[i];
                }
                *ta += lane_acc;
            }
        }
        for (a, t) in acc.iter_mut().zip(&tile_acc) {
            *a += *t;
        }
    }
    out.copy_from_slice(&acc);
    bytes
}

fn bitplane_path(layer: &PackedLayer, x_rows: &[&[f32]], cfg: &GemvConfig) -> Result<(Vec<f32>, ExecReport)> {
    let k = cfg.bit_width;
    let m = x_rows.len();
    let padded = layer.planes().padded_cols();
    let layout = layer.planes().layout();
    let xs: Vec<Vec<f32>> = x_rows
        .iter()
        .map(|x| {
            let mut g = gather_lanes(x, padded, layout);
            if cfg.half_activations {
                g.iter_mut().for_each(|v| *v = to_half(*v));
            }
            g
        })
        .collect();

    let rows = layer.rows();
    let mut out = vec![0.0f32; rows * m];
    let counters: Vec<(u64, u64)> = out
        .par_chunks_mut(m)
        .enumerate()
        .map(|(r, o)| {
            let table = RowTable::load(layer, k, r, cfg.merge_tables)?;
            let planes = row_products(layer, k, r, &table, &xs, o);
            Ok((planes, table.bytes()))
        })
        .collect::<Result<_>>()?;
    let report = ExecReport {
        planes_bytes_read: counters.iter().map(|c| c.0).sum(),
        table_bytes_read: counters.iter().map(|c| c.1).sum(),
        path: if k == 3 && cfg.merge_tables {
            KernelPath::MergedTable3
        } else {
            KernelPath::Bitplane
        },
    };
    Ok((out, report))
}

fn to_half(v: f32) -> f32 {
    half::f16::from_f32(v).to_f32()
}

/// `y = W_k · x`, reading only the `k` most significant planes.
pub fn gemv(layer: &PackedLayer, x: &[f32], cfg: &GemvConfig) -> Result<(Vec<f32>, ExecReport)> {
    cfg.check(layer)?;
    if x.len() != layer.cols() {
        return Err(Error::Shape(format!(
            "activation length {} vs {} input features",
            x.len(),
            layer.cols()
        )));
    }
    bitplane_path(layer, &[x], cfg)
}

/// `Y = X · W_kᵀ` for a batch `X` of shape `M × in_features`; the result is
/// `M × out_channels`.
///
/// Batches up to `cfg.dense_threshold` rows share each decoded lane across
/// all rows; larger batches dequantize once and multiply densely.
pub fn gemm(layer: &PackedLayer, x: &Matrix, cfg: &GemvConfig) -> Result<(Matrix, ExecReport)> {
    cfg.check(layer)?;
    if x.rows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if x.cols() != layer.cols() {
        return Err(Error::Shape(format!(
            "batch has {} features vs {} input features",
            x.cols(),
            layer.cols()
        )));
    }
    let m = x.rows();
    let rows = layer.rows();
    if m <= cfg.dense_threshold {
        let x_rows: Vec<&[f32]> = (0..m).map(|i| x.row(i)).collect();
        let (flat, report) = bitplane_path(layer, &x_rows, cfg)?;
        // flat is row-major (out_channels × M); transpose into M × out_channels.
        let mut y = Matrix::zeros(m, rows);
        for r in 0..rows {
            for i in 0..m {
                y.row_mut(i)[r] = flat[r * m + i];
            }
        }
        return Ok((y, report));
    }

    let (w, mut report) = dequantize_with_report(layer, cfg.bit_width)?;
    let mut y = Matrix::zeros(m, rows);
    y.as_mut_slice()
        .par_chunks_mut(rows)
        .enumerate()
        .for_each(|(i, yr)| {
            let xr: Vec<f32> = if cfg.half_activations {
                x.row(i).iter().map(|&v| to_half(v)).collect()
            } else {
                x.row(i).to_vec()
            };
            for (r, out) in yr.iter_mut().enumerate() {
                *out = w.row(r).iter().zip(&xr).map(|(a, b)| a * b).sum();
            }
        });
    report.path = KernelPath::Dense;
    Ok((y, report))
}

/// Dense `k`-bit weights (unpadded), decoded lane by lane from the planes.
pub fn dequantize(layer: &PackedLayer, k: u8) -> Result<Matrix> {
    dequantize_with_report(layer, k).map(|(w, _)| w)
}

fn dequantize_with_report(layer: &PackedLayer, k: u8) -> Result<(Matrix, ExecReport)> {
    GemvConfig::new(k).check(layer)?;
    let planes = layer.planes();
    let prefix = planes.prefix(k)?;
    let layout = planes.layout();
    let (rows, cols) = (layer.rows(), layer.cols());
    let tiles = planes.padded_cols() / TILE_WEIGHTS;

    let mut out = Matrix::zeros(rows, cols);
    let counters: Vec<(u64, u64)> = out
        .as_mut_slice()
        .par_chunks_mut(cols)
        .enumerate()
        .map(|(r, o)| {
            let table = RowTable::load(layer, k, r, false)?;
            let row_base = r * planes.row_bytes();
            let mut words = [0u32; 8];
            let mut w = [0.0f32; 32];
            let mut bytes = 0u64;
            for tile in 0..tiles {
                for lane in 0..LANES {
                    load_lane(prefix, row_base + tile * TILE_BYTES + 4 * lane, &mut words);
                    bytes += 4 * k as u64;
                    decode_lane(&words[..k as usize], &table, &mut w);
                    for (bit, &v) in w.iter().enumerate() {
                        let col = tile * TILE_WEIGHTS + layout.weight_in_tile(lane, bit);
                        if col < cols {
                            o[col] = v;
                        }
                    }
                }
            }
            Ok((bytes, table.bytes()))
        })
        .collect::<Result<_>>()?;
    let report = ExecReport {
        planes_bytes_read: counters.iter().map(|c| c.0).sum(),
        table_bytes_read: counters.iter().map(|c| c.1).sum(),
        path: KernelPath::Dense,
    };
    Ok((out, report))
}
