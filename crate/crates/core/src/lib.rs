//! Any-precision quantization of dense weight matrices.
//!
//! A single `n_max`-bit parent model is built by quantizing every output
//! channel to a small seed bit-width with sensitivity-weighted 1-D clustering,
//! then splitting each cluster in two, one bit at a time. Every `k`-bit model
//! in the supported range is the top-`k`-bit prefix of the parent codes.
//!
//! * [`quant`] builds the seed model and upscales it.
//! * [`codec`] stores codes as MSB-first bitplanes, applies the coalescing
//!   byte permutation and reads/writes the `.apq` container.
//! * [`kernel`] runs matrix-vector and small-batch matrix-matrix products
//!   reading only the planes a given bit-width needs.

pub mod codec;
pub mod error;
pub mod kernel;
pub mod matrix;
pub mod quant;

pub use codec::{BitplaneTensor, Layout, PackedLayer};
pub use error::{Error, Result};
pub use kernel::{ExecReport, GemvConfig, KernelPath};
pub use matrix::{CodeMatrix, Matrix};
pub use quant::{AnyPrecisionLayer, ChannelQuantization, SensitivityMap};

/// Smallest bit-width a layer may be quantized to.
pub const MIN_BITS: u8 = 2;
/// Largest bit-width a layer may be quantized to.
pub const MAX_BITS: u8 = 8;
