use half::f16;
use rayon::prelude::*;

use super::{
    check_bits, quantize_channel, row_pair, sorted_order, upscale_in_order, ChannelQuantization, SensitivityMap,
};
use crate::error::{Error, Result};
use crate::{CodeMatrix, Matrix};

/// Centroid table for one bit-width: `rows × 2^bit_width` half floats.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidTable {
    bit_width: u8,
    rows: usize,
    values: Vec<f16>,
}

impl CentroidTable {
    pub fn new(bit_width: u8, rows: usize, values: Vec<f16>) -> Result<Self> {
        check_bits(bit_width)?;
        if values.len() != rows << bit_width {
            return Err(Error::Shape(format!(
                "{bit_width}-bit table for {rows} rows needs {} entries, got {}",
                rows << bit_width,
                values.len()
            )));
        }
        Ok(Self {
            bit_width,
            rows,
            values,
        })
    }

    pub fn bit_width(&self) -> u8 {
        self.bit_width
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row(&self, r: usize) -> &[f16] {
        let k = 1usize << self.bit_width;
        &self.values[r * k..(r + 1) * k]
    }

    pub fn as_slice(&self) -> &[f16] {
        &self.values
    }

    /// Size in bytes when stored.
    pub fn byte_len(&self) -> usize {
        self.values.len() * 2
    }

    /// True when every row is non-decreasing.
    pub fn rows_sorted(&self) -> bool {
        (0..self.rows).all(|r| self.row(r).windows(2).all(|w| w[0] <= w[1]))
    }
}

/// The deployable any-precision artifact: `n_max`-bit parent codes plus one
/// centroid table per supported bit-width.
///
/// The `k`-bit model is the top `k` bits of each code looked up in
/// `table(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnyPrecisionLayer {
    n_min: u8,
    n_max: u8,
    codes: CodeMatrix,
    tables: Vec<CentroidTable>,
}

impl AnyPrecisionLayer {
    pub fn new(n_min: u8, n_max: u8, codes: CodeMatrix, tables: Vec<CentroidTable>) -> Result<Self> {
        validate_tables(n_min, n_max, codes.rows(), &tables)?;
        let limit = 1u32 << n_max;
        for r in 0..codes.rows() {
            if let Some(c) = codes.row(r).iter().position(|&v| v as u32 >= limit) {
                return Err(Error::CodeRange {
                    row: r,
                    col: c,
                    code: codes.get(r, c) as u32,
                    bits: n_max,
                });
            }
        }
        Ok(Self {
            n_min,
            n_max,
            codes,
            tables,
        })
    }

    pub fn n_min(&self) -> u8 {
        self.n_min
    }

    pub fn n_max(&self) -> u8 {
        self.n_max
    }

    pub fn rows(&self) -> usize {
        self.codes.rows()
    }

    pub fn cols(&self) -> usize {
        self.codes.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    /// Parent (`n_max`-bit) codes.
    pub fn codes(&self) -> &CodeMatrix {
        &self.codes
    }

    pub fn tables(&self) -> &[CentroidTable] {
        &self.tables
    }

    pub fn supports(&self, k: u8) -> bool {
        (self.n_min..=self.n_max).contains(&k)
    }

    pub fn table(&self, k: u8) -> Result<&CentroidTable> {
        if !self.supports(k) {
            return Err(Error::Parameter(format!(
                "bit-width {k} not in {}..={}",
                self.n_min, self.n_max
            )));
        }
        Ok(&self.tables[(k - self.n_min) as usize])
    }

    /// Top-`k`-bit prefix codes.
    pub fn prefix_codes(&self, k: u8) -> Result<CodeMatrix> {
        self.table(k)?;
        Ok(self.codes.shifted(self.n_max - k))
    }

    /// Dense `k`-bit weights.
    pub fn dequantize(&self, k: u8) -> Result<Matrix> {
        let table = self.table(k)?;
        let shift = self.n_max - k;
        let mut out = Matrix::zeros(self.rows(), self.cols());
        for r in 0..self.rows() {
            let t = table.row(r);
            for (o, &c) in out.row_mut(r).iter_mut().zip(self.codes.row(r)) {
                *o = t[(c >> shift) as usize].to_f32();
            }
        }
        Ok(out)
    }
}

/// Checks that `tables` holds one `rows`-row table per width in `n_min..=n_max`.
pub(crate) fn validate_tables(n_min: u8, n_max: u8, rows: usize, tables: &[CentroidTable]) -> Result<()> {
    check_range(n_min, n_max)?;
    if tables.len() != (n_max - n_min + 1) as usize {
        return Err(Error::Shape(format!(
            "{} tables for bit-widths {n_min}..={n_max}",
            tables.len()
        )));
    }
    for (t, k) in tables.iter().zip(n_min..=n_max) {
        if t.bit_width() != k || t.rows() != rows {
            return Err(Error::Shape(format!(
                "table {} bits × {} rows where {k} bits × {rows} rows expected",
                t.bit_width(),
                t.rows(),
            )));
        }
    }
    Ok(())
}

/// Per-level statistics recorded while building a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildReport {
    pub n_min: u8,
    /// `sse[level][channel]`, level 0 being `n_min`. Computed from the FP64
    /// centroids before they are rounded into the tables.
    pub sse: Vec<Vec<f64>>,
    /// Channels whose sensitivity was all zero.
    pub fallback_channels: Vec<usize>,
}

impl BuildReport {
    pub fn sse_at(&self, k: u8) -> &[f64] {
        &self.sse[(k - self.n_min) as usize]
    }

    /// Total weighted SSE across channels at bit-width `k`.
    pub fn total_sse(&self, k: u8) -> f64 {
        self.sse_at(k).iter().sum()
    }
}

/// Seed quantization of one channel at `n_min` followed by upscaling to
/// `n_max`. Element `i` of the result is the `n_min + i`-bit quantization.
pub fn build_channel(row: &[f64], sens: &[f64], n_min: u8, n_max: u8) -> Result<Vec<ChannelQuantization>> {
    check_range(n_min, n_max)?;
    let (seed, _) = quantize_channel(row, sens, n_min)?;
    let order = sorted_order(row);
    let mut levels = Vec::with_capacity((n_max - n_min + 1) as usize);
    levels.push(seed);
    for _ in n_min..n_max {
        let next = upscale_in_order(levels.last().expect("seed"), row, sens, &order)?;
        levels.push(next);
    }
    Ok(levels)
}

fn check_range(n_min: u8, n_max: u8) -> Result<()> {
    check_bits(n_min)?;
    check_bits(n_max)?;
    if n_min > n_max {
        return Err(Error::Parameter(format!("n_min {n_min} > n_max {n_max}")));
    }
    Ok(())
}

/// Builds the any-precision layer for `w`: seed at `n_min`, then one-bit
/// upscaling steps to `n_max`, recording a centroid table at every width.
/// Channels are processed independently (in parallel).
pub fn build_any_precision(
    w: &Matrix,
    s: &SensitivityMap,
    n_min: u8,
    n_max: u8,
) -> Result<(AnyPrecisionLayer, BuildReport)> {
    check_range(n_min, n_max)?;
    if w.shape() != s.shape() {
        return Err(Error::Shape(format!(
            "weights {:?} vs sensitivity {:?}",
            w.shape(),
            s.shape()
        )));
    }
    if w.rows() == 0 || w.cols() == 0 {
        return Err(Error::Shape("empty weight matrix".into()));
    }
    let (rows, cols) = w.shape();
    let levels = (n_max - n_min + 1) as usize;

    let per_channel: Vec<(Vec<ChannelQuantization>, bool)> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let (row, sens, fallback) = row_pair(w, s, r);
            build_channel(&row, &sens, n_min, n_max).map(|l| (l, fallback))
        })
        .collect::<Result<_>>()?;

    let mut codes = Vec::with_capacity(rows * cols);
    let mut table_values: Vec<Vec<f16>> = (0..levels)
        .map(|l| Vec::with_capacity(rows << (n_min as usize + l)))
        .collect();
    let mut sse = vec![Vec::with_capacity(rows); levels];
    let mut fallback_channels = Vec::new();
    for (r, (chan, fallback)) in per_channel.iter().enumerate() {
        if *fallback {
            log::warn!("channel {r} has zero sensitivity; using uniform weights");
            fallback_channels.push(r);
        }
        codes.extend_from_slice(chan.last().expect("at least one level").codes());
        for (l, cq) in chan.iter().enumerate() {
            table_values[l].extend(cq.centroids().iter().map(|&c| f16::from_f64(c)));
            sse[l].push(cq.sse());
        }
    }
    let tables = table_values
        .into_iter()
        .zip(n_min..=n_max)
        .map(|(v, k)| CentroidTable::new(k, rows, v))
        .collect::<Result<Vec<_>>>()?;
    let layer = AnyPrecisionLayer::new(n_min, n_max, CodeMatrix::new(rows, cols, codes)?, tables)?;
    Ok((
        layer,
        BuildReport {
            n_min,
            sse,
            fallback_channels,
        },
    ))
}

/// Appends upscaled levels to `layer` until it reaches `n_max` bits. The
/// existing codes and tables are kept; the top level's clusters are rebuilt
/// from its codes and split further. `w` and `s` must be the weights and
/// sensitivities the layer was built from.
pub fn extend_any_precision(
    layer: &AnyPrecisionLayer,
    w: &Matrix,
    s: &SensitivityMap,
    n_max: u8,
) -> Result<(AnyPrecisionLayer, BuildReport)> {
    check_range(layer.n_min(), n_max)?;
    if n_max < layer.n_max() {
        return Err(Error::Parameter(format!(
            "cannot shrink a {}-bit layer to {n_max} bits",
            layer.n_max()
        )));
    }
    if w.shape() != layer.shape() || s.shape() != layer.shape() {
        return Err(Error::Shape(format!(
            "layer {:?}, weights {:?}, sensitivity {:?}",
            layer.shape(),
            w.shape(),
            s.shape()
        )));
    }
    let (n_min, old_max) = (layer.n_min(), layer.n_max());
    let rows = layer.rows();
    let per_channel: Vec<(Vec<ChannelQuantization>, bool)> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let (row, sens, fallback) = row_pair(w, s, r);
            let mut levels = Vec::with_capacity((n_max - n_min + 1) as usize);
            for k in n_min..=old_max {
                let codes: Vec<u8> = layer.codes().row(r).iter().map(|c| c >> (old_max - k)).collect();
                let table: Vec<f64> = layer.table(k)?.row(r).iter().map(|c| c.to_f64()).collect();
                levels.push(ChannelQuantization::from_codes(&row, &sens, &codes, k, &table)?);
            }
            let order = sorted_order(&row);
            for _ in old_max..n_max {
                let next = upscale_in_order(levels.last().expect("seed"), &row, &sens, &order)?;
                levels.push(next);
            }
            Ok((levels, fallback))
        })
        .collect::<Result<_>>()?;

    let cols = layer.cols();
    let mut codes = Vec::with_capacity(rows * cols);
    let mut tables = layer.tables().to_vec();
    let mut new_values: Vec<Vec<f16>> = (old_max + 1..=n_max).map(|k| Vec::with_capacity(rows << k)).collect();
    let mut sse = vec![Vec::with_capacity(rows); (n_max - n_min + 1) as usize];
    let mut fallback_channels = Vec::new();
    for (r, (chan, fallback)) in per_channel.iter().enumerate() {
        if *fallback {
            fallback_channels.push(r);
        }
        codes.extend_from_slice(chan.last().expect("at least one level").codes());
        for (l, cq) in chan.iter().enumerate() {
            sse[l].push(cq.sse());
        }
        for (v, cq) in new_values.iter_mut().zip(&chan[(old_max - n_min + 1) as usize..]) {
            v.extend(cq.centroids().iter().map(|&c| f16::from_f64(c)));
        }
    }
    for (v, k) in new_values.into_iter().zip(old_max + 1..=n_max) {
        tables.push(CentroidTable::new(k, rows, v)?);
    }
    let layer = AnyPrecisionLayer::new(n_min, n_max, CodeMatrix::new(rows, cols, codes)?, tables)?;
    Ok((
        layer,
        BuildReport {
            n_min,
            sse,
            fallback_channels,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (Matrix, SensitivityMap) {
        let w = Matrix::new(
            2,
            6,
            vec![0.5, -1.0, 0.25, 2.0, -0.75, 1.5, 3.0, 3.0, -2.0, 0.0, 1.0, -1.0],
        )
        .unwrap();
        let s = SensitivityMap::uniform(2, 6);
        (w, s)
    }

    #[test]
    fn single_width_layer() {
        let (w, s) = tiny();
        let (layer, report) = build_any_precision(&w, &s, 3, 3).unwrap();
        assert_eq!(layer.tables().len(), 1);
        assert_eq!(report.sse.len(), 1);
        let (seed, _) = super::super::quantize_seed(&w, &s, 3).unwrap();
        for r in 0..2 {
            assert_eq!(layer.codes().row(r), seed[r].codes());
        }
    }

    #[test]
    fn zero_sse_layer_dequantizes_exactly() {
        let (w, s) = tiny();
        let (layer, _) = build_any_precision(&w, &s, 3, 5).unwrap();
        // Every value is representable in f16 and each row has ≤ 8 distinct values.
        for k in 3..=5 {
            assert_eq!(layer.dequantize(k).unwrap(), w);
        }
    }

    #[test]
    fn rejects_bad_ranges() {
        let (w, s) = tiny();
        assert!(build_any_precision(&w, &s, 4, 3).is_err());
        assert!(build_any_precision(&w, &s, 1, 3).is_err());
        assert!(build_any_precision(&w, &s, 2, 9).is_err());
        let s2 = SensitivityMap::uniform(2, 5);
        assert!(matches!(build_any_precision(&w, &s2, 2, 3), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_sensitivity_channel_reported() {
        let (w, _) = tiny();
        let mut sv = vec![1.0f32; 12];
        sv[6..].iter_mut().for_each(|v| *v = 0.0);
        let s = SensitivityMap::new(Matrix::new(2, 6, sv).unwrap()).unwrap();
        let (_, report) = build_any_precision(&w, &s, 2, 3).unwrap();
        assert_eq!(report.fallback_channels, vec![1]);
    }

    #[test]
    fn table_lookup_errors() {
        let (w, s) = tiny();
        let (layer, _) = build_any_precision(&w, &s, 2, 4).unwrap();
        assert!(layer.table(5).is_err());
        assert!(layer.table(1).is_err());
        assert!(layer.prefix_codes(4).is_ok());
    }
}
