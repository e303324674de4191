//! AWQ-style preprocessing: per-input-channel activation scaling and
//! per-row clipping, chosen by grid search against the calibration output
//! error. The scaled weights are quantized with RTN and the scale is folded
//! back out when dequantizing.

use nalgebra::{DMatrix, DVector};

use crate::error::{LabError, Result};
use crate::rtn::{rtn_quantize, rtn_upscale, UniformQuantParams};

pub const SCALE_CANDIDATES: usize = 20;
pub const CLIP_CANDIDATES: usize = 20;

/// Exponents `α` applied to the mean activation magnitudes: `0, 0.05, ..., 0.95`.
pub fn scale_exponents() -> Vec<f64> {
    (0..SCALE_CANDIDATES).map(|i| i as f64 / SCALE_CANDIDATES as f64).collect()
}

/// Clip ratios `1, 0.975, ..., 0.525` of each row's largest magnitude.
pub fn clip_ratios() -> Vec<f64> {
    (0..CLIP_CANDIDATES).map(|i| 1.0 - 0.025 * i as f64).collect()
}

/// Output-error objective `Σ_r e_r G e_rᵀ` with `G = XᵀX`.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    gram: DMatrix<f64>,
    weight_only: bool,
}

impl Objective {
    /// From a `samples × in_features` calibration matrix. An all-zero
    /// sample set falls back to plain weight MSE (`G = I`).
    pub fn from_calibration(calib: &DMatrix<f64>) -> Result<Self> {
        if calib.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Parameter("calibration data must be finite".into()));
        }
        if calib.iter().all(|&v| v == 0.0) {
            log::warn!("calibration activations are all zero; using weight-only error");
            return Ok(Self {
                gram: DMatrix::identity(calib.ncols(), calib.ncols()),
                weight_only: true,
            });
        }
        Ok(Self {
            gram: calib.tr_mul(calib),
            weight_only: false,
        })
    }

    pub fn weight_only(&self) -> bool {
        self.weight_only
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn row_loss(&self, e: &DVector<f64>) -> f64 {
        e.dot(&(&self.gram * e))
    }

    /// Error of `approx` against `w`, summed over rows.
    pub fn loss(&self, w: &DMatrix<f64>, approx: &DMatrix<f64>) -> f64 {
        let e = approx - w;
        (&e * &self.gram).component_mul(&e).sum()
    }
}

/// Per-input-channel scales `max(mean|X_j|, 1e-4)^α`, normalized by
/// `sqrt(max · min)`.
pub fn activation_scales(calib: &DMatrix<f64>, alpha: f64) -> Vec<f64> {
    let n = calib.nrows().max(1) as f64;
    let raw: Vec<f64> = calib
        .column_iter()
        .map(|c| (c.iter().map(|v| v.abs()).sum::<f64>() / n).max(1e-4).powf(alpha))
        .collect();
    let hi = raw.iter().copied().fold(f64::MIN, f64::max);
    let lo = raw.iter().copied().fold(f64::MAX, f64::min);
    let norm = (hi * lo).sqrt();
    raw.into_iter().map(|s| s / norm).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AwqResult {
    pub alpha: f64,
    pub input_scales: Vec<f64>,
    /// Chosen clip ratio of each row.
    pub clip: Vec<f64>,
    /// Scaled and clipped weights `W'`.
    pub scaled: DMatrix<f64>,
    pub params: Vec<UniformQuantParams>,
    /// Objective value of the chosen candidate.
    pub loss: f64,
    pub weight_only: bool,
}

impl AwqResult {
    /// RTN codes of the preprocessed weights.
    pub fn codes(&self) -> Result<DMatrix<u32>> {
        Ok(rtn_quantize(&self.scaled, &self.params)?.codes)
    }

    /// Weights the quantized layer actually applies.
    pub fn effective(&self) -> Result<DMatrix<f64>> {
        Ok(unscale(&rtn_quantize(&self.scaled, &self.params)?.dequant, &self.input_scales))
    }
}

fn unscale(q: &DMatrix<f64>, scales: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(q.nrows(), q.ncols(), |r, c| q[(r, c)] / scales[c])
}

/// One row scaled by `scales` and clipped to `±ratio · max|·|`, with its grid.
fn clipped_row(w: &DMatrix<f64>, r: usize, scales: &[f64], ratio: f64, bits: u8) -> Result<(Vec<f64>, UniformQuantParams)> {
    let scaled: Vec<f64> = w.row(r).iter().zip(scales).map(|(v, s)| v * s).collect();
    let limit = ratio * scaled.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let row: Vec<f64> = scaled.iter().map(|v| v.clamp(-limit, limit)).collect();
    let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((row, UniformQuantParams::from_range(lo, hi, bits)?))
}

/// Loss of one row under a specific `(scales, ratio)` candidate.
pub fn candidate_row_loss(
    w: &DMatrix<f64>,
    r: usize,
    objective: &Objective,
    scales: &[f64],
    ratio: f64,
    bits: u8,
) -> Result<f64> {
    let (row, p) = clipped_row(w, r, scales, ratio, bits)?;
    let e = DVector::from_fn(row.len(), |c, _| p.value(p.code(row[c])) / scales[c] - w[(r, c)]);
    Ok(objective.row_loss(&e))
}

/// Grid search over [`scale_exponents`] × per-row [`clip_ratios`]. Ties
/// keep the earliest candidate (smaller `α`, larger clip ratio).
pub fn awq_like_preprocess(w: &DMatrix<f64>, calib: &DMatrix<f64>, bits: u8) -> Result<AwqResult> {
    if calib.ncols() != w.ncols() {
        return Err(LabError::Shape(format!(
            "calibration has {} columns, weights have {}",
            calib.ncols(),
            w.ncols()
        )));
    }
    if w.is_empty() {
        return Err(LabError::Shape("empty weight matrix".into()));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(LabError::Parameter("weights must be finite".into()));
    }
    let objective = Objective::from_calibration(calib)?;
    let ratios = clip_ratios();
    let mut best: Option<(f64, f64, Vec<f64>, Vec<f64>)> = None;
    for alpha in scale_exponents() {
        let scales = activation_scales(calib, alpha);
        let mut total = 0.0;
        let mut clip = Vec::with_capacity(w.nrows());
        for r in 0..w.nrows() {
            let mut row_best = (f64::INFINITY, ratios[0]);
            for &ratio in &ratios {
                let l = candidate_row_loss(w, r, &objective, &scales, ratio, bits)?;
                if l < row_best.0 {
                    row_best = (l, ratio);
                }
            }
            total += row_best.0;
            clip.push(row_best.1);
        }
        if best.as_ref().is_none_or(|b| total < b.0) {
            best = Some((total, alpha, scales, clip));
        }
    }
    let (loss, alpha, input_scales, clip) = best.expect("nonempty grid");
    let mut scaled = DMatrix::zeros(w.nrows(), w.ncols());
    let mut params = Vec::with_capacity(w.nrows());
    for (r, &ratio) in clip.iter().enumerate() {
        let (row, p) = clipped_row(w, r, &input_scales, ratio, bits)?;
        scaled.row_mut(r).copy_from_slice(&row);
        params.push(p);
    }
    Ok(AwqResult {
        alpha,
        input_scales,
        clip,
        scaled,
        params,
        loss,
        weight_only: objective.weight_only(),
    })
}

/// Upscales the preprocessed seed by repeated bin splitting, reusing its
/// scales and clipping. Returns the effective weights at
/// `bits + 1 ..= bits + levels`.
pub fn reused_upscale(seed: &AwqResult, levels: u8) -> Result<Vec<DMatrix<f64>>> {
    let mut codes = seed.codes()?;
    let mut params = seed.params.clone();
    let mut out = Vec::with_capacity(levels as usize);
    for _ in 0..levels {
        let (c, p) = rtn_upscale(&seed.scaled, &codes, &params)?;
        out.push(unscale(&crate::rtn::dequantize(&c, &p), &seed.input_scales));
        codes = c;
        params = p;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(scale_exponents()[0], 0.0);
        assert_eq!(clip_ratios()[0], 1.0);
        assert_eq!(clip_ratios().len(), 20);
        assert!((clip_ratios()[19] - 0.525).abs() < 1e-12);
    }

    #[test]
    fn zero_exponent_gives_unit_scales() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, -4.0, 0.0, 3.0, 2.0, 0.5]);
        assert!(activation_scales(&x, 0.0).iter().all(|&s| s == 1.0));
    }

    #[test]
    fn zero_calibration_is_flagged() {
        let w = DMatrix::from_row_slice(1, 3, &[0.1, 0.5, -0.3]);
        let r = awq_like_preprocess(&w, &DMatrix::zeros(4, 3), 2).unwrap();
        assert!(r.weight_only);
        assert!(r.input_scales.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn shape_mismatch() {
        assert!(awq_like_preprocess(&DMatrix::zeros(2, 3), &DMatrix::zeros(4, 2), 3).is_err());
    }
}
