//! GPTQ column-by-column quantization with error compensation, and the
//! clamped variant that upscales an existing `n`-bit result to `n + 1` bits
//! while keeping every code inside the two-code window it inherits.
//!
//! Compensation is the standard GPTQ/OBQ update: with `U` the upper
//! Cholesky factor of `H⁻¹`, quantizing column `i` gives the scaled error
//! `e = (w_i − q_i) / U[i,i]`, and every later column `j` is adjusted by
//! `w_j −= e · U[i,j]`.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{LabError, Result};
use crate::rtn::{dequantize, row_params, UniformQuantParams};

/// Relative damping added to the Hessian diagonal before factorization.
pub const DAMPING: f64 = 0.01;
/// Damping increases (×10 each) tried after the first factorization fails.
pub const MAX_DAMPING_RETRIES: usize = 3;

/// Upper Cholesky factor of `(H + λI)⁻¹`, with `λ = 0.01 · mean(diag H)`
/// grown tenfold on each failed attempt.
pub fn inverse_cholesky_upper(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = h.nrows();
    if n == 0 || h.ncols() != n {
        return Err(LabError::Shape(format!("hessian must be square and nonempty, got {:?}", h.shape())));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(LabError::Parameter("hessian must be finite".into()));
    }
    let tol = 1e-9 * h.amax().max(1.0);
    if (h - h.transpose()).amax() > tol {
        return Err(LabError::Parameter("hessian is not symmetric".into()));
    }
    let mut damping = DAMPING * h.diagonal().mean();
    for attempt in 0..=MAX_DAMPING_RETRIES {
        if attempt > 0 {
            damping *= 10.0;
            log::warn!("hessian factorization failed; retrying with damping {damping:e}");
        }
        let damped = h + DMatrix::identity(n, n) * damping;
        let Some(chol) = Cholesky::new(damped) else { continue };
        if let Some(inv) = Cholesky::new(chol.inverse()) {
            return Ok(inv.l().transpose());
        }
    }
    Err(LabError::NotPositiveDefinite {
        attempts: MAX_DAMPING_RETRIES + 1,
        damping,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GptqOutput {
    pub codes: DMatrix<u32>,
    pub params: Vec<UniformQuantParams>,
    pub dequant: DMatrix<f64>,
    /// Per-column RMSD against the tracked `n`-bit run and mean clamp amount.
    pub trace: LabTrace,
}

/// Per-column divergence record of an upscaling run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabTrace {
    /// RMSD between the `n`-bit and `n+1`-bit compensated weight matrices
    /// after each column is processed.
    pub rmsd: Vec<f64>,
    /// Mean absolute code change forced by the clamp, in `n+1`-bit code units.
    pub mean_clamp: Vec<f64>,
}

impl LabTrace {
    pub fn len(&self) -> usize {
        self.rmsd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rmsd.is_empty()
    }

    /// CSV with header `column,rmsd,mean_clamp`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("column,rmsd,mean_clamp\n");
        for (i, (r, c)) in self.rmsd.iter().zip(&self.mean_clamp).enumerate() {
            s.push_str(&format!("{i},{r},{c}\n"));
        }
        s
    }
}

fn check(w: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<()> {
    if w.is_empty() {
        return Err(LabError::Shape("empty weight matrix".into()));
    }
    if h.shape() != (w.ncols(), w.ncols()) {
        return Err(LabError::Shape(format!("hessian {:?} for {} columns", h.shape(), w.ncols())));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(LabError::Parameter("weights must be finite".into()));
    }
    Ok(())
}

fn compensate(w: &mut DMatrix<f64>, u: &DMatrix<f64>, i: usize, q: &[f64]) {
    let d = u[(i, i)];
    for r in 0..w.nrows() {
        let e = (w[(r, i)] - q[r]) / d;
        for j in i + 1..w.ncols() {
            w[(r, j)] -= e * u[(i, j)];
        }
    }
}

fn rmsd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    ((a - b).norm_squared() / a.len() as f64).sqrt()
}

/// Plain GPTQ at `bits` on each row's min/max grid. `h` is the raw
/// calibration Hessian `XᵀX`; damping is added here. The trace holds zero
/// clamping and the RMSD against the uncompensated weights.
pub fn gptq_quantize(w: &DMatrix<f64>, h: &DMatrix<f64>, bits: u8) -> Result<GptqOutput> {
    check(w, h)?;
    let u = inverse_cholesky_upper(h)?;
    let params = row_params(w, bits)?;
    let mut work = w.clone();
    let mut codes = DMatrix::zeros(w.nrows(), w.ncols());
    let mut trace = LabTrace::default();
    for i in 0..w.ncols() {
        let q: Vec<f64> = (0..w.nrows())
            .map(|r| {
                codes[(r, i)] = params[r].code(work[(r, i)]);
                params[r].value(codes[(r, i)])
            })
            .collect();
        compensate(&mut work, &u, i, &q);
        trace.rmsd.push(rmsd(w, &work));
        trace.mean_clamp.push(0.0);
    }
    Ok(GptqOutput {
        dequant: dequantize(&codes, &params),
        codes,
        params,
        trace,
    })
}

/// Upscales an `n`-bit GPTQ result to `n + 1` bits on the midpoint-split
/// grid, clamping each code into `[2·q_n, 2·q_n + 1]`. The `n`-bit run is
/// replayed in lockstep from `base` so the trace can compare the two
/// compensated weight matrices column by column.
pub fn gptq_upscale_clamped(w: &DMatrix<f64>, base: &GptqOutput, h: &DMatrix<f64>) -> Result<GptqOutput> {
    check_base(w, base, h)?;
    let params: Vec<UniformQuantParams> = base.params.iter().map(|p| p.split()).collect::<Result<_>>()?;
    lockstep(w, base, h, params, true)
}

/// Direct GPTQ at `n + 1` bits on its own min/max grid, traced against the
/// same replayed `n`-bit run as [`gptq_upscale_clamped`]. Nothing is clamped.
pub fn gptq_direct_traced(w: &DMatrix<f64>, base: &GptqOutput, h: &DMatrix<f64>) -> Result<GptqOutput> {
    check_base(w, base, h)?;
    let bits = base.params[0].bits + 1;
    lockstep(w, base, h, row_params(w, bits)?, false)
}

fn check_base(w: &DMatrix<f64>, base: &GptqOutput, h: &DMatrix<f64>) -> Result<()> {
    check(w, h)?;
    if base.codes.shape() != w.shape() || base.params.len() != w.nrows() {
        return Err(LabError::Shape("base result does not match the weights".into()));
    }
    Ok(())
}

fn lockstep(
    w: &DMatrix<f64>,
    base: &GptqOutput,
    h: &DMatrix<f64>,
    params: Vec<UniformQuantParams>,
    clamped: bool,
) -> Result<GptqOutput> {
    let u = inverse_cholesky_upper(h)?;
    let mut low = w.clone();
    let mut high = w.clone();
    let mut codes = DMatrix::zeros(w.nrows(), w.ncols());
    let mut trace = LabTrace::default();
    for i in 0..w.ncols() {
        let q_low: Vec<f64> = (0..w.nrows()).map(|r| base.params[r].value(base.codes[(r, i)])).collect();
        let mut clamp = 0.0;
        let q_high: Vec<f64> = (0..w.nrows())
            .map(|r| {
                let p = &params[r];
                let raw = p.code(high[(r, i)]);
                let c = if clamped {
                    let window = 2 * base.codes[(r, i)];
                    raw.clamp(window, window + 1)
                } else {
                    raw
                };
                clamp += raw.abs_diff(c) as f64;
                codes[(r, i)] = c;
                p.value(c)
            })
            .collect();
        compensate(&mut low, &u, i, &q_low);
        compensate(&mut high, &u, i, &q_high);
        trace.rmsd.push(rmsd(&low, &high));
        trace.mean_clamp.push(clamp / w.nrows() as f64);
    }
    Ok(GptqOutput {
        dequant: dequantize(&codes, &params),
        codes,
        params,
        trace,
    })
}

/// Calibration-weighted reconstruction error `Σ_r e_r H e_rᵀ`.
pub fn weighted_error(w: &DMatrix<f64>, approx: &DMatrix<f64>, h: &DMatrix<f64>) -> f64 {
    let e = approx - w;
    (&e * h).component_mul(&e).sum()
}
