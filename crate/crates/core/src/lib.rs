//! 1-bit post-training quantization of dense weight matrices in the Haar domain.
//!
//! The pipeline quantizes a weight matrix block by block: it picks salient
//! columns by trial quantization, binarizes Haar coefficients with
//! magnitude-split groups per frequency band, and compensates the remaining
//! columns for each block's residual using the calibration Hessian.

pub mod calib;
pub mod cli;
pub mod error;
pub mod format;
pub mod grouping;
pub mod haar;
pub mod pipeline;
pub mod salient;
pub mod tensor;

pub use calib::{CalibStats, Damping};
pub use error::{HbllmError, Result};
pub use format::{bit_report, decode_layer, encode_layer, BitReport};
pub use grouping::GroupingConfig;
pub use haar::{Axis, HaarCoeffs};
pub use pipeline::{dequantize_layer, hbllm_quantize, Mode, QuantConfig, QuantizedBlock, QuantizedLayer};
pub use salient::{ScoreNorm, ScoreSource, SalientMask};
pub use tensor::{frobenius_error, matmul, DenseMatrix};
