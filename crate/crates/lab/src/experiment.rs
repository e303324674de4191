//! The fixed-seed upscaling benchmark: AWQ-style reuse versus direct search,
//! and clamped versus direct GPTQ.

use crate::awq::{awq_like_preprocess, reused_upscale, Objective};
use crate::error::{LabError, Result};
use crate::gptq::{gptq_direct_traced, gptq_quantize, gptq_upscale_clamped, weighted_error, LabTrace};
use crate::synth::{synthetic_problem, SyntheticConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct LabConfig {
    pub problem: SyntheticConfig,
    /// Bit-width of the seed model.
    pub seed_bits: u8,
    /// Highest bit-width the AWQ-style comparison reaches.
    pub max_bits: u8,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            problem: SyntheticConfig::default(),
            seed_bits: 3,
            max_bits: 6,
        }
    }
}

/// Calibration output error of reused versus direct preprocessing at one width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AwqComparison {
    pub bits: u8,
    pub reused_error: f64,
    pub direct_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabReport {
    pub awq: Vec<AwqComparison>,
    /// Clamped GPTQ from `seed_bits` to `seed_bits + 1`.
    pub clamped: LabTrace,
    /// Direct GPTQ at `seed_bits + 1`.
    pub direct: LabTrace,
    pub clamped_error: f64,
    pub direct_error: f64,
}

impl LabReport {
    /// CSV with header `bits,reused_error,direct_error`.
    pub fn awq_csv(&self) -> String {
        let mut s = String::from("bits,reused_error,direct_error\n");
        for c in &self.awq {
            s.push_str(&format!("{},{},{}\n", c.bits, c.reused_error, c.direct_error));
        }
        s
    }
}

pub fn run_lab(cfg: &LabConfig) -> Result<LabReport> {
    if cfg.seed_bits < 1 || cfg.max_bits <= cfg.seed_bits || cfg.max_bits > 12 {
        return Err(LabError::Parameter(format!(
            "need 1 <= seed_bits < max_bits <= 12, got {} and {}",
            cfg.seed_bits, cfg.max_bits
        )));
    }
    let p = synthetic_problem(&cfg.problem)?;
    let objective = Objective::from_calibration(&p.calib)?;

    let seed = awq_like_preprocess(&p.weights, &p.calib, cfg.seed_bits)?;
    let upscaled = reused_upscale(&seed, cfg.max_bits - cfg.seed_bits)?;
    let mut awq = Vec::with_capacity(upscaled.len());
    for (bits, eff) in (cfg.seed_bits + 1..=cfg.max_bits).zip(&upscaled) {
        let direct = awq_like_preprocess(&p.weights, &p.calib, bits)?;
        awq.push(AwqComparison {
            bits,
            reused_error: objective.loss(&p.weights, eff),
            direct_error: objective.loss(&p.weights, &direct.effective()?),
        });
    }

    let base = gptq_quantize(&p.weights, &p.hessian, cfg.seed_bits)?;
    let clamped = gptq_upscale_clamped(&p.weights, &base, &p.hessian)?;
    let direct = gptq_direct_traced(&p.weights, &base, &p.hessian)?;
    Ok(LabReport {
        awq,
        clamped_error: weighted_error(&p.weights, &clamped.dequant, &p.hessian),
        direct_error: weighted_error(&p.weights, &direct.dequant, &p.hessian),
        clamped: clamped.trace,
        direct: direct.trace,
    })
}
