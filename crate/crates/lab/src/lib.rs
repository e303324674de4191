//! Incremental upscaling experiments on uniform quantization: RTN bin
//! splitting, AWQ-style preprocessing reused across bit-widths, and GPTQ
//! with clamped upscaling.

pub mod awq;
pub mod error;
pub mod experiment;
pub mod gptq;
pub mod rtn;
pub mod synth;

pub use awq::{awq_like_preprocess, AwqResult, Objective};
pub use error::{LabError, Result};
pub use experiment::{run_lab, AwqComparison, LabConfig, LabReport};
pub use gptq::{gptq_direct_traced, gptq_quantize, gptq_upscale_clamped, GptqOutput, LabTrace};
pub use rtn::{rtn_quantize, rtn_upscale, RtnOutput, UniformQuantParams};
pub use synth::{synthetic_problem, SyntheticConfig, SyntheticProblem};
