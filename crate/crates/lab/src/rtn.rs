//! Round-to-nearest uniform quantization and midpoint bin splitting.

use nalgebra::DMatrix;

use crate::error::{LabError, Result};

/// Largest bit-width the uniform grids support.
pub const MAX_UNIFORM_BITS: u8 = 16;

/// Per-channel uniform grid: points `zero + i·scale` for `i < 2^bits`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformQuantParams {
    pub scale: f64,
    pub zero: f64,
    pub bits: u8,
}

impl UniformQuantParams {
    pub fn new(scale: f64, zero: f64, bits: u8) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(LabError::Parameter(format!("scale {scale} must be positive and finite")));
        }
        if !zero.is_finite() {
            return Err(LabError::Parameter(format!("zero point {zero} is not finite")));
        }
        if !(1..=MAX_UNIFORM_BITS).contains(&bits) {
            return Err(LabError::Parameter(format!("bit-width {bits} outside [1, {MAX_UNIFORM_BITS}]")));
        }
        Ok(Self { scale, zero, bits })
    }

    /// Min/max grid spanning `[lo, hi]`. A constant row gets scale 1.
    pub fn from_range(lo: f64, hi: f64, bits: u8) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(LabError::Parameter(format!("invalid range [{lo}, {hi}]")));
        }
        let steps = ((1u32 << bits.min(MAX_UNIFORM_BITS)) - 1) as f64;
        let scale = (hi - lo) / steps;
        Self::new(if scale > 0.0 { scale } else { 1.0 }, lo, bits)
    }

    pub fn max_code(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    pub fn value(&self, code: u32) -> f64 {
        self.zero + code as f64 * self.scale
    }

    /// Unclamped real-valued code, rounded to nearest with ties going down.
    pub fn raw_code(&self, w: f64) -> f64 {
        ((w - self.zero) / self.scale - 0.5).ceil()
    }

    pub fn code(&self, w: f64) -> u32 {
        self.raw_code(w).clamp(0.0, self.max_code() as f64) as u32
    }

    /// Grid after splitting every bin at its midpoint.
    pub fn split(&self) -> Result<Self> {
        Self::new(self.scale / 2.0, self.zero - self.scale / 4.0, self.bits + 1)
    }
}

/// Min/max grid of every row of `w`.
pub fn row_params(w: &DMatrix<f64>, bits: u8) -> Result<Vec<UniformQuantParams>> {
    w.row_iter()
        .map(|r| UniformQuantParams::from_range(r.min(), r.max(), bits))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RtnOutput {
    pub codes: DMatrix<u32>,
    pub dequant: DMatrix<f64>,
}

fn check_rows(w: &DMatrix<f64>, params: &[UniformQuantParams]) -> Result<()> {
    if params.len() != w.nrows() {
        return Err(LabError::Shape(format!("{} grids for {} rows", params.len(), w.nrows())));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(LabError::Parameter("weights must be finite".into()));
    }
    Ok(())
}

/// Quantizes each row of `w` onto its grid.
pub fn rtn_quantize(w: &DMatrix<f64>, params: &[UniformQuantParams]) -> Result<RtnOutput> {
    check_rows(w, params)?;
    let codes = DMatrix::from_fn(w.nrows(), w.ncols(), |r, c| params[r].code(w[(r, c)]));
    Ok(RtnOutput {
        dequant: dequantize(&codes, params),
        codes,
    })
}

pub fn dequantize(codes: &DMatrix<u32>, params: &[UniformQuantParams]) -> DMatrix<f64> {
    DMatrix::from_fn(codes.nrows(), codes.ncols(), |r, c| params[r].value(codes[(r, c)]))
}

/// Splits every `n`-bit bin at its midpoint: the new code is `2q` if `w`
/// lies at or below the old representative, else `2q + 1`. Returns the
/// `n+1`-bit codes and grids.
pub fn rtn_upscale(
    w: &DMatrix<f64>,
    codes: &DMatrix<u32>,
    params: &[UniformQuantParams],
) -> Result<(DMatrix<u32>, Vec<UniformQuantParams>)> {
    check_rows(w, params)?;
    if codes.shape() != w.shape() {
        return Err(LabError::Shape(format!("codes {:?} vs weights {:?}", codes.shape(), w.shape())));
    }
    let up: Vec<UniformQuantParams> = params.iter().map(|p| p.split()).collect::<Result<_>>()?;
    let new = DMatrix::from_fn(w.nrows(), w.ncols(), |r, c| {
        let q = codes[(r, c)];
        2 * q + u32::from(w[(r, c)] > params[r].value(q))
    });
    Ok((new, up))
}
