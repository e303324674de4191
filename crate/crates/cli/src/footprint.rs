//! Storage footprint of one any-precision model versus separate models.

use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    pub out_channels: u64,
    pub in_features: u64,
    /// How many times the layer occurs (e.g. once per block).
    #[serde(default = "one")]
    pub repeat: u64,
}

fn one() -> u64 {
    1
}

/// Quantized linear layers plus the parameters kept in FP16.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub fp16_passthrough_params: u64,
}

impl ArchSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| CliError::Validation(format!("arch spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(CliError::Validation("arch spec has no layers".into()));
        }
        for l in &self.layers {
            if l.out_channels == 0 || l.in_features == 0 || l.repeat == 0 {
                return Err(CliError::Validation(format!(
                    "layer {}: dimensions and repeat must be positive",
                    l.name
                )));
            }
        }
        Ok(())
    }

    pub fn quantized_params(&self) -> u64 {
        self.layers.iter().map(|l| l.out_channels * l.in_features * l.repeat).sum()
    }

    pub fn output_channels(&self) -> u64 {
        self.layers.iter().map(|l| l.out_channels * l.repeat).sum()
    }

    /// FP16 centroid tables for bit-width `k` across all layers.
    pub fn table_bytes(&self, k: u8) -> u64 {
        self.output_channels() * (1u64 << k) * 2
    }

    pub fn passthrough_bytes(&self) -> u64 {
        self.fp16_passthrough_params * 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Footprint {
    pub bits: Vec<u8>,
    pub any_precision_bytes: u64,
    pub separate_bytes: u64,
}

impl Footprint {
    pub fn ratio(&self) -> f64 {
        self.separate_bytes as f64 / self.any_precision_bytes as f64
    }
}

/// The any-precision model stores `max(bits)` bitplanes, one table per
/// requested width and the FP16 parameters once. Separate models each store
/// their own codes and table; the FP16 parameters are counted once unless
/// `passthrough_per_model` is set.
pub fn footprint(arch: &ArchSpec, bits: &[u8], passthrough_per_model: bool) -> Result<Footprint> {
    arch.validate()?;
    let mut bits = bits.to_vec();
    bits.sort_unstable();
    bits.dedup();
    let (Some(&lo), Some(&hi)) = (bits.first(), bits.last()) else {
        return Err(CliError::Validation("empty bit-width set".into()));
    };
    if lo < anyprec_core::MIN_BITS || hi > anyprec_core::MAX_BITS {
        return Err(CliError::Validation(format!(
            "bit-widths must lie in [{}, {}]",
            anyprec_core::MIN_BITS,
            anyprec_core::MAX_BITS
        )));
    }
    let q = arch.quantized_params();
    let codes = |k: u8| (q * k as u64).div_ceil(8);
    let tables: u64 = bits.iter().map(|&k| arch.table_bytes(k)).sum();
    let passthrough = arch.passthrough_bytes();
    let models = if passthrough_per_model { bits.len() as u64 } else { 1 };
    Ok(Footprint {
        any_precision_bytes: codes(hi) + tables + passthrough,
        separate_bytes: bits.iter().map(|&k| codes(k)).sum::<u64>() + tables + passthrough * models,
        bits,
    })
}
