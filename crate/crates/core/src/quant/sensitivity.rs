use crate::error::{Error, Result};
use crate::Matrix;

/// Per-weight nonnegative importance used as the clustering weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMap {
    values: Matrix,
}

impl SensitivityMap {
    /// Wraps `values`; every entry must be finite and nonnegative.
    ///
    /// Channels whose entries are all zero are accepted here; the quantizer
    /// treats them as uniformly weighted.
    pub fn new(values: Matrix) -> Result<Self> {
        if let Some(i) = values.as_slice().iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Parameter(format!(
                "sensitivity at ({}, {}) is negative or not finite",
                i / values.cols().max(1),
                i % values.cols().max(1)
            )));
        }
        Ok(Self { values })
    }

    pub fn uniform(rows: usize, cols: usize) -> Self {
        Self {
            values: Matrix::filled(rows, cols, 1.0),
        }
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    /// Channels with no positive entry.
    pub fn zero_channels(&self) -> Vec<usize> {
        (0..self.values.rows())
            .filter(|&r| !self.values.row(r).iter().any(|&v| v > 0.0))
            .collect()
    }
}

/// Output of [`estimate_sensitivity_diag`].
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityEstimate {
    pub map: SensitivityMap,
    /// Set when no usable gradient signal existed and the map is all ones.
    pub uniform_fallback: bool,
}

/// Diagonal Fisher-style estimate: the elementwise mean of squared gradients.
///
/// `shape` fixes the output shape when `samples` is empty.
pub fn estimate_sensitivity_diag(
    samples: &[Matrix],
    shape: (usize, usize),
) -> Result<SensitivityEstimate> {
    let (rows, cols) = shape;
    let fallback = || {
        log::warn!("no gradient signal; using uniform sensitivity");
        SensitivityEstimate {
            map: SensitivityMap::uniform(rows, cols),
            uniform_fallback: true,
        }
    };
    if samples.is_empty() {
        return Ok(fallback());
    }
    if let Some(s) = samples.iter().find(|s| s.shape() != shape) {
        return Err(Error::Shape(format!(
            "gradient sample {:?} vs expected {shape:?}",
            s.shape()
        )));
    }

    let mut acc = vec![0.0f64; rows * cols];
    for s in samples {
        for (a, &g) in acc.iter_mut().zip(s.as_slice()) {
            let g = g as f64;
            *a += g * g;
        }
    }
    let n = samples.len() as f64;
    let data: Vec<f32> = acc.iter().map(|&a| (a / n) as f32).collect();
    if data.iter().all(|&v| v == 0.0) {
        return Ok(fallback());
    }
    Ok(SensitivityEstimate {
        map: SensitivityMap::new(Matrix::new(rows, cols, data)?)?,
        uniform_fallback: false,
    })
}
