//! Quantization-aware training lab for dense object detectors.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: a small reverse-mode differentiable array engine.
//! - [`quant`]: simulated per-tensor symmetric quantization (fixed, learnable
//!   and power-of-two step) and the network-wide bit policy.
//! - [`loss`]: detection losses plus the task-correlation and harmonious-IoU
//!   objectives that couple the classification and regression heads.
//! - [`detector`]: a toy single-scale two-head detector, target assignment,
//!   box decoding, IoU and NMS.
//! - [`eval`]: COCO-style AP and the score/IoU harmony diagnostics.
//! - [`harness`]: synthetic data, training, QAT fine-tuning, sweeps and export.
//!
//! Data-parallel kernels run on rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain loops otherwise. Results are
//! bit-identical either way.

pub mod detector;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod harness;
pub mod loss;
pub mod parallel;
pub mod quant;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
