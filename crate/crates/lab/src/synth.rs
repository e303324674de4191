//! Seeded synthetic weights and correlated calibration activations.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{LabError, Result};

/// Shape and generator settings of a synthetic benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    /// Calibration samples.
    pub samples: usize,
    /// Pairwise correlation between input features, in `[0, 1)`.
    pub correlation: f64,
    /// Standard deviation of the log magnitude of each input feature.
    pub channel_spread: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rows: 64,
            cols: 128,
            samples: 4096,
            correlation: 0.9,
            channel_spread: 0.5,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.samples == 0 {
            return Err(LabError::Shape("rows, cols and samples must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.correlation) {
            return Err(LabError::Parameter(format!("correlation {} outside [0, 1)", self.correlation)));
        }
        if !(self.channel_spread >= 0.0 && self.channel_spread.is_finite()) {
            return Err(LabError::Parameter(format!("channel spread {} is invalid", self.channel_spread)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProblem {
    /// `rows × cols` standard Gaussian weights.
    pub weights: DMatrix<f64>,
    /// `samples × cols` activations.
    pub calib: DMatrix<f64>,
    /// `calibᵀ · calib`.
    pub hessian: DMatrix<f64>,
}

/// Weights are i.i.d. standard normal. Each activation sample is
/// `sqrt(ρ)·g + sqrt(1−ρ)·e_j` per feature (one shared `g` per sample),
/// then feature `j` is scaled by a fixed log-normal magnitude.
pub fn synthetic_problem(cfg: &SyntheticConfig) -> Result<SyntheticProblem> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let weights = DMatrix::from_fn(cfg.rows, cfg.cols, |_, _| StandardNormal.sample(&mut rng));
    let spread = Normal::new(0.0, cfg.channel_spread).expect("validated spread");
    let magnitude: Vec<f64> = (0..cfg.cols).map(|_| spread.sample(&mut rng).exp()).collect();
    let (shared, own) = (cfg.correlation.sqrt(), (1.0 - cfg.correlation).sqrt());
    let mut calib = DMatrix::zeros(cfg.samples, cfg.cols);
    for i in 0..cfg.samples {
        let g: f64 = StandardNormal.sample(&mut rng);
        for j in 0..cfg.cols {
            let e: f64 = StandardNormal.sample(&mut rng);
            calib[(i, j)] = (shared * g + own * e) * magnitude[j];
        }
    }
    let hessian = calib.tr_mul(&calib);
    Ok(SyntheticProblem { weights, calib, hessian })
}
